from fsseg.corpus import B, I, TaggedSequence, Token


def make_seq(words, tags=None, dialogue="d0", turn="t0", speaker="A", msg=None):
    msg = msg or [k == 0 for k in range(len(words))]
    tokens = [Token(w, m) for w, m in zip(words, msg)]
    return TaggedSequence(dialogue, turn, speaker, tokens, tags or ())


def tags_of(text):
    return [B if c == "B" else I for c in text]
