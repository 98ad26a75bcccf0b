# Embedding store tour: the binary vector format and exact top-K search.
#
# Every retrieval stage trades in one currency: row-major float32 matrices
# of unit vectors bound to string ids. Caption rows use "articleId#idx" ids
# so search can collapse multiple captions of one article into one hit.

import tempfile
from pathlib import Path

import numpy as np

from newsrecon import EmbeddingMatrix, fake_matrix, load_matrix, save_matrix, top_k

# Offline embeddings: a deterministic unit vector per payload string.
# Real deployments swap in the embedder sidecar; the engine cannot tell.
captions = fake_matrix(
    [
        ("storm:0#0", "flooded streets after the storm"),
        ("storm:0#1", "rescue boats between houses"),
        ("vote:1#0", "long lines outside a polling station"),
        ("fire:2#0", "smoke rising over a pine forest"),
    ],
    dim=64,
)
print(f"{captions.rows} caption rows, dim {captions.dim}")

# Round-trip through the on-disk format; the trailing checksum catches any
# corruption, and rows are validated as unit-norm on load.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "captions.nrec"
    save_matrix(captions, path)
    print(f"wrote {path.stat().st_size} bytes")
    captions = load_matrix(path)

# Query with one of the storm captions: its own article comes back first
# (self-similarity 1.0), deduplicated at the article level.
query = captions.row("storm:0#1")
for hit in top_k(query, captions, k=3):
    print(f"  {hit.article_id:8s} caption #{hit.caption_idx}  score {hit.score:+.4f}")
