"""Show how short learned pieces keep typo'd strings retrievable.

Trains a small unigram vocabulary on a handful of artist names, then
segments clean and corrupted spellings side by side. Because pieces are
at most 3 characters, a one-character typo only disturbs the pieces that
touch it; the rest still overlap the catalog entry.

Run: python3 demos/tokenizer_pieces.py
"""

from sfns import retrieval_tokens, train_unigram

CATALOG = [
    "taylor swift",
    "tay dizm",
    "pink",
    "dj ekalavya",
    "sonidero aczino",
    "me enamore",
]

# vocabulary is trained over logged queries, so common corruptions of the
# catalog show up in the training text alongside the clean names
QUERY_LOG = CATALOG * 40 + ["p!nk", "tayler swift", "sonideroaczino"] * 10


def main():
    model = train_unigram(QUERY_LOG, vocab_size=60, max_piece_len=3)
    print(f"trained {model.vocab_size} pieces, max length 3\n")

    pairs = [
        ("taylor swift", "tayler swift"),  # substitution
        ("pink", "p!nk"),                  # symbol variation
        ("sonidero aczino", "sonideroaczino"),  # dropped space
        ("me enamore", "me enamroe"),      # transposed chars
    ]
    for clean, typo in pairs:
        a = model.segment_pieces(clean)
        b = model.segment_pieces(typo)
        shared = set(a) & set(b)
        print(f"  {clean!r:24} -> {' '.join(a)}")
        print(f"  {typo!r:24} -> {' '.join(b)}")
        print(f"  {'':24}    shared pieces: {sorted(shared)}\n")

    print("symbol swaps like p!nk keep little surface overlap; bridging those")
    print("is the learned expander's job (see demos/expansion_training.py).\n")

    # retrieval_tokens is what the index and query sides actually consume:
    # unknown characters are dropped rather than polluting the token stream.
    print("token ids for 'p?nk':", retrieval_tokens(model, "p?nk"))


if __name__ == "__main__":
    main()
