"""
How the time-aware memory forgets
=================================

Before each step the history-level LSTM splits its cell state into a
short-term part and the rest, and scales the short-term part by 1/days.
Long gaps between encounters therefore wash out recent context while the
long-term part passes through unchanged.
"""
import numpy as np

from htnnr import embedding, nn

rng = np.random.default_rng(0)
vocab = embedding.Vocabulary([embedding.UNKNOWN, "ICD:A"])
emb = embedding.EmbeddingMatrix(rng.normal(size=(2, 4)))
model = nn.build_model("htnnr", vocab, emb, {"code_hidden": 3, "history_hidden": 5}, seed=0)
cell = model.tlstm

c = rng.normal(size=5)
print("days   g     |c_hat|   |c* - c|")
for days in (0, 1, 2, 7, 30, 180):
    g = nn.decay(days)
    c_star, c_hat = nn.adjust_memory(cell, c, g)
    print(f"{days:4d}  {float(g):.3f}  {np.linalg.norm(c_hat.data):.4f}   {np.linalg.norm(c_star.data - c):.4f}")

# with every gap at one day or less the decomposition is a no-op, so the
# model agrees with a plain LSTM over the encounter vectors
x = nn.EncodedHistory((np.array([1, 1]), np.array([1]), np.array([0, 1, 1])), np.ones(3))
print("same-day visits:", model.forward_batch([x]).data[0],
      model.forward_batch([x], bypass_decomposition=True).data[0])

spread = nn.EncodedHistory(x.codes, np.array([1.0, 40.0, 200.0]))
print("spread over 240 days:", model.forward_batch([spread]).data[0])
