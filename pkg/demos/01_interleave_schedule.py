"""
The 1:2 text/audio schedule
===========================

Every text token is followed by two coarse acoustic codes. When the audio
outlasts the transcript, the text side continues with pad tokens.
"""

from chroma_stream.tokens import (
    PAD, deinterleave, dumps_sequence, interleave, text_token, validate_ratio,
)

text = [text_token(i) for i in (17, 42)]
codes = [3, 9, 4, 4, 11, 2]

# three groups: two real tokens, then a pad
seq = interleave(text, codes)
print(dumps_sequence(seq))
print("valid:", validate_ratio(seq))

# the round trip returns the pad-extended text and the codes unchanged
t_back, c_back = deinterleave(seq)
print("text:", [t.id for t in t_back], "pad id:", PAD.id)
print("codes:", list(c_back))

# generation may stop half way through a group
partial = interleave(text, codes[:3], truncated=True)
print("truncated group valid:", validate_ratio(partial))
