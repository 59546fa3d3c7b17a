"""
Reading from the episodic memory
================================

The memory is a FIFO of (embedding, label) slots. A query is compared to every
slot by cosine similarity, a softmax turns the scores into weights, and the
weights are summed per label into a class distribution.
"""
import numpy as np

from memcredit import EpisodicMemory, MemorySlot, Rng, read

rng = Rng(1)
mem = EpisodicMemory(capacity=4, embed_dim=3)
for step in range(1, 7):
    mem.write(MemorySlot(rng.normal(3), label=step % 3, write_step=step))

# only the four most recent writes survive, oldest first
print("write steps:", mem.write_steps, "labels:", mem.labels)

q = mem.embeddings[:, -1] + 0.1 * rng.normal(3)
r = read(mem, q, tau=0.5)
print("similarities:", np.round(r.s, 3))
print("class distribution:", np.round(r.p, 3))

###############################################################################
# Scaling the query does not change the prediction.

print(np.allclose(read(mem, 100 * q, tau=0.5).p, r.p))
