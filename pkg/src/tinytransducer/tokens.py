"""Reserved token ids shared by every vocabulary."""

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
N_SPECIAL = 3
