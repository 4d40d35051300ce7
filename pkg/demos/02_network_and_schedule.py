"""The numpy MLP: gradient check, batch norm modes and the one-cycle schedule."""
# %%
import numpy as np

from conformal_pll.model import Adam, MlpModel, OneCycleSchedule, loss_and_grad, train_step, weighted_log_loss

rng = np.random.default_rng(0)

# %% [markdown]
# Backprop against central differences on a tiny network.

# %%
model = MlpModel(3, 3, hidden=(4,), batch_norm=False, rng=rng)
x = rng.standard_normal((6, 3))
w = rng.dirichlet(np.ones(3), size=6)
_, dlogits = loss_and_grad(model.logits(x), w)
analytic = {k: v.copy() for k, v in model.backward(dlogits).items()}

worst = 0.0
h = 1e-5
for name, p in model.params.items():
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = weighted_log_loss(model.forward(x), w)
        p[idx] = old - h
        down = weighted_log_loss(model.forward(x), w)
        p[idx] = old
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - analytic[name][idx]) / max(abs(num), abs(analytic[name][idx]), 1e-8))
print(f"max relative gradient error: {worst:.2e}")

# %% [markdown]
# Batch statistics drive training; running statistics drive evaluation.

# %%
net = MlpModel(10, 5, rng=np.random.default_rng(1))
batch = rng.standard_normal((16, 10)) + 2.0
net.train().forward(batch)
print("running mean after one batch:", np.round(net.buffers["mean0"][:4], 3))
p = net.predict_proba(batch[:1])
print("eval on a single row works:", p.shape)

# %% [markdown]
# The learning rate warms up over the first 30% of steps, then anneals.

# %%
sched = OneCycleSchedule(total_steps=1000, peak_lr=1e-3)
for step in (0, 150, 300, 650, 1000):
    print(f"step {step:4d}: lr = {sched(step):.2e}")

# %% [markdown]
# A short fit on a linearly separable problem.

# %%
xs = rng.standard_normal((128, 10))
ys = np.eye(5)[(xs[:, :5]).argmax(axis=1)]
net = MlpModel(10, 5, rng=np.random.default_rng(2))
opt = Adam()
before = weighted_log_loss(net.predict_proba(xs), ys)
for _ in range(200):
    train_step(net, xs, ys, opt, 1e-3)
print(f"loss {before:.3f} -> {weighted_log_loss(net.predict_proba(xs), ys):.3f}")
