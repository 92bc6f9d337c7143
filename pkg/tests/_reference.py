"""Plain-numpy re-implementations used as independent oracles.

Only parameter values are read from the torch modules; every formula below
is written out again from the textbook definitions.
"""

import math

import numpy as np


def p(t):
    return t.detach().numpy().astype(np.float64)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softplus(x):
    return np.log1p(np.exp(x))


def linear(mod, x):
    return x @ p(mod.weight).T + p(mod.bias)


def fcn(net, x, act=np.tanh, out=lambda v: v):
    n = len(net.layers)
    for i, layer in enumerate(net.layers):
        x = linear(layer, x)
        x = act(x) if i < n - 1 else out(x)
    return x


def lstm(cell, x, h, c):
    H = h.shape[-1]
    z = np.concatenate([x, h]) @ p(cell.weight).T + p(cell.bias)
    i, f, g, o = z[:H], z[H : 2 * H], z[2 * H : 3 * H], z[3 * H :]
    c = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
    return sigmoid(o) * np.tanh(c), c


def gaussian_head(head, x):
    f = fcn(head.encoder, x, out=np.tanh)
    return linear(head.mean, f), softplus(linear(head.var, f)) + 1e-6


def attention(mod, q, k, v):
    Q, K, V = linear(mod.q_proj, q), linear(mod.k_proj, k), linear(mod.v_proj, v)
    heads = mod.heads
    dh = Q.shape[-1] // heads
    outs = []
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        s = Q[:, sl] @ K[:, sl].T / math.sqrt(dh)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        outs.append((s / s.sum(axis=1, keepdims=True)) @ V[:, sl])
    return linear(mod.out_proj, np.concatenate(outs, axis=1))


def step_embedding(n, width):
    half = width // 2
    k = np.arange(half)
    freqs = 10000.0 ** (-k / max(half, 1))
    e = np.concatenate([np.sin(n * freqs), np.cos(n * freqs)])
    return np.append(e, 0.0) if width % 2 else e


def denoiser(net, xn, n, cond):
    cfg = net.cfg
    tok = xn[:, None] * p(net.token_weight) + p(net.token_bias)
    tok = tok + attention(net.self_attn, tok, tok, tok)
    tok = tok + linear(net.step_proj, step_embedding(n, cfg.embed_dim))
    ctx = np.tanh(linear(net.context, cond)).reshape(cfg.context_tokens, cfg.embed_dim)
    tok = tok + attention(net.cross_attn, tok, ctx, ctx)
    return fcn(net.head, tok)[:, 0]


def kl(mq, vq, mp, vp):
    return float(np.sum(0.5 * (np.log(vp / vq) + (vq + (mq - mp) ** 2) / vp - 1.0)))


def dual_loss_loop(model, window, steps, eps, eps_latent):
    """One pass of the per-step training objective over a (T, d) window."""
    rec = model.recurrence
    cfg = model.cfg
    betas = np.linspace(cfg.beta_min, cfg.beta_max, cfg.n_steps) if cfg.n_steps > 1 else np.array([cfg.beta_min])
    abar = np.cumprod(1.0 - betas)
    h = np.zeros(cfg.hidden)
    c = np.zeros(cfg.hidden)
    kl_sum = rec_sum = 0.0
    for t in range(window.shape[0]):
        x = window[t]
        mq, vq = gaussian_head(rec.posterior_net, np.concatenate([h, x]))
        if rec.learned_prior:
            mp, vp = gaussian_head(rec.prior_net, h)
        else:
            mp, vp = np.zeros(cfg.latent), np.ones(cfg.latent)
        kl_sum += kl(mq, vq, mp, vp)
        z = fcn(rec.projection, mq + np.sqrt(vq) * eps_latent[t])
        n = int(steps[t])
        xn = math.sqrt(abar[n - 1]) * x + math.sqrt(1 - abar[n - 1]) * eps[t]
        cond = z if cfg.variant == "stochdiff" else np.concatenate([z, h])
        x0 = denoiser(model.decoder, xn, n, cond)
        rec_sum += float(np.sum((x - x0) ** 2))
        h, c = lstm(rec.rnn, np.concatenate([x, z]), h, c)
    return kl_sum + rec_sum, kl_sum, rec_sum
