"""
When the credit mechanisms agree
================================

If the decoder reconstructs observations perfectly and the encoder has not
moved since the slots were written, backprop through stored activations,
exact reinstatement and approximate reinstatement give the same encoder
gradient. ``OracleDecoder`` supplies the perfect reconstruction.
"""
from memcredit import EncoderParams, EpisodicMemory, MemorySlot, OracleDecoder, Rng
from memcredit.credit import (assign_baseline, assign_reinstate_approx,
                              assign_reinstate_exact, encode)
from memcredit.memory import read, read_backward
from memcredit.nn import cross_entropy

rng = Rng(2)
enc = EncoderParams.init(rng, embed_dim=4, hidden=8, obs_dim=6)
mem = EpisodicMemory(8, 4, store_x=True, store_h=True, obs_dim=6, hidden_dim=8)
for step in range(1, 9):
    x = rng.random((6, 1))
    h, e = encode(enc, x)
    mem.write(MemorySlot(e[:, 0], int(rng.integers(10)), step, x=x[:, 0], h=h[:, 0]))

q, y = rng.normal(4), 3
r = read(mem, q)
g_e = read_backward(mem, q, r, cross_entropy(r.p, y)[1])

base = assign_baseline(enc, mem, g_e)
approx = assign_reinstate_approx(mem, OracleDecoder(), enc, g_e)
exact = assign_reinstate_exact(mem, OracleDecoder(), enc, q, y).grads
print("baseline vs approx:", base.max_abs_diff(approx))
print("baseline vs exact: ", base.max_abs_diff(exact))
