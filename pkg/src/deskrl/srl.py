"""State-representation learning: warmup collection, PCA / auto-encoder fits,
and online projection of observations into the learned latent space.

The projection model is fit exactly once, on the observations gathered
during the random-action warmup; afterwards transform() is a pure
function applied between the environment and the agent.
"""

from __future__ import annotations

import struct

import numpy as np

from . import nn

PCA_MAGIC = b"DKPC"


class SrlState:
    """Warmup bookkeeping: collects raw observation rows until the target."""

    def __init__(self, warmup_samples):
        self.warmup_samples = int(warmup_samples)
        self.phase = "warmup"
        self._rows = []
        self.collected = 0

    def observe(self, rows):
        """Ingest observation rows; flips to active once the target is met."""
        if self.phase != "warmup":
            raise RuntimeError("srl warmup already finished")
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[0]:
            self._rows.append(rows)
            self.collected += rows.shape[0]
        if self.collected >= self.warmup_samples:
            self.phase = "active"
        return self.phase

    def data(self):
        return (np.concatenate(self._rows, axis=0) if self._rows
                else np.empty((0, 0)))


class PcaModel:
    """Mean, orthonormal top-k components, and the full eigenvalue spectrum."""

    def __init__(self, mean, components, eigvals):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.components = np.asarray(components, dtype=np.float64)
        self.eigvals = np.asarray(eigvals, dtype=np.float64)
        self.k = self.components.shape[0]
        self.d = self.mean.shape[0]

    def transform(self, obs):
        """Project obs (vector or batch) into the latent space."""
        obs = np.asarray(obs, dtype=np.float64)
        return (obs - self.mean) @ self.components.T

    def inverse_transform(self, latent):
        return np.asarray(latent) @ self.components + self.mean

    @property
    def latent_dim(self):
        return self.k


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigvals, eigvecs) with eigenvectors in columns, unordered.
    """
    a = np.array(a, dtype=np.float64)
    d = a.shape[0]
    v = np.eye(d)
    for _ in range(max_sweeps):
        off_diag = a - np.diag(np.diag(a))
        off = np.sqrt((off_diag ** 2).sum())
        if off < tol * max(1.0, np.abs(np.diag(a)).max()):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:  # theta^2 would overflow
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1.0))
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


def pca_fit(data, k) -> PcaModel:
    """Fit mean + top-k principal directions of `data` (n x d).

    Covariance uses the n-1 divisor; eigenvalues are clamped at zero and
    sorted descending; each component's largest-magnitude entry is made
    positive so fits are byte-reproducible.
    """
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if n < 2:
        raise ValueError("pca needs at least 2 samples")
    if not 1 <= k <= min(n, d):
        raise ValueError(f"latent dim {k} out of range [1, {min(n, d)}]")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    if eigvals.sum() <= 0.0:
        raise ValueError("data has zero variance: nothing to represent")
    components = eigvecs[:, order].T[:k]
    for row in components:
        if row[np.argmax(np.abs(row))] < 0.0:
            row *= -1.0
    return PcaModel(mean, components, eigvals)


def pca_transform(model: PcaModel, obs):
    return model.transform(obs)


def explained_variance(model: PcaModel, k):
    """Fraction of total variance captured by the top-k components."""
    if not 0 <= k <= model.eigvals.size:
        raise ValueError("k out of range")
    total = model.eigvals.sum()
    if total <= 0.0:
        raise ValueError("zero total variance")
    return float(model.eigvals[:k].sum() / total)


def smallest_latent_dim(eigvals, threshold):
    """Lowest k whose cumulative explained variance reaches `threshold`."""
    total = eigvals.sum()
    cum = np.cumsum(eigvals) / total
    return int(np.searchsorted(cum, threshold - 1e-12) + 1)


class AeModel:
    """Encoder/decoder pair trained for mean squared reconstruction error."""

    def __init__(self, encoder: nn.Mlp, decoder: nn.Mlp):
        if encoder.sizes[-1] != decoder.sizes[0]:
            raise ValueError("encoder output dim must match decoder input dim")
        self.encoder = encoder
        self.decoder = decoder
        self.k = encoder.sizes[-1]
        self.d = encoder.sizes[0]

    def transform(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        z, _ = nn.mlp_forward(self.encoder, obs)
        return z[0] if single else z

    def reconstruct(self, obs):
        z = self.transform(np.atleast_2d(obs))
        x, _ = nn.mlp_forward(self.decoder, z)
        return x

    @property
    def latent_dim(self):
        return self.k


def ae_fit(data, k, hidden=(64,), activation="tanh", epochs=50, batch_size=64,
           lr=1e-3, rng=None):
    """Train an auto-encoder on `data`; returns (AeModel, final epoch loss)."""
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if n < batch_size:
        raise ValueError("need at least one full batch of samples")
    if rng is None:
        rng = np.random.default_rng()
    hidden = list(hidden)
    enc_sizes = [d] + hidden + [k]
    dec_sizes = [k] + hidden[::-1] + [d]
    acts_enc = [activation] * len(hidden) + ["linear"]
    acts_dec = [activation] * len(hidden) + ["linear"]
    encoder = nn.mlp_init(enc_sizes, acts_enc, "xavier_uniform", rng)
    decoder = nn.mlp_init(dec_sizes, acts_dec, "xavier_uniform", rng)
    adam_enc = nn.AdamState(encoder.params_list())
    adam_dec = nn.AdamState(decoder.params_list())
    loss = np.inf
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            x = data[order[start:start + batch_size]]
            m = x.shape[0]
            z, enc_cache = nn.mlp_forward(encoder, x)
            xhat, dec_cache = nn.mlp_forward(decoder, z)
            err = xhat - x
            losses.append(float((err ** 2).mean()))
            dxhat = 2.0 * err / err.size
            dec_grads, dz = nn.mlp_backward(decoder, dec_cache, dxhat)
            enc_grads, _ = nn.mlp_backward(encoder, enc_cache, dz)
            nn.adam_step(adam_dec, decoder.params_list(), dec_grads.as_list(), lr)
            nn.adam_step(adam_enc, encoder.params_list(), enc_grads.as_list(), lr)
        loss = float(np.mean(losses))
        if not np.isfinite(loss):
            raise FloatingPointError("auto-encoder training diverged")
    return AeModel(encoder, decoder), loss


def save_pca(model: PcaModel, path):
    """Persist a PCA model: magic, dims, mean, spectrum, components."""
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<II", model.d, model.k))
        fh.write(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.eigvals, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PCA_MAGIC:
            raise ValueError(f"bad magic {magic!r} in pca file")
        d, k = struct.unpack("<II", fh.read(8))
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").astype(np.float64)
        eigvals = np.frombuffer(fh.read(8 * d), dtype="<f8").astype(np.float64)
        comp = np.frombuffer(fh.read(8 * k * d), dtype="<f8").astype(np.float64)
    return PcaModel(mean, eigvals=eigvals, components=comp.reshape(k, d))


class PcaBuilder:
    """Factory product: fits a PcaModel from warmup data per its params."""

    kind = "pca"

    def __init__(self, params):
        self.params = params

    def fit(self, data, rng=None):
        k = int(self.params.get("latent_dim"))
        if k > 0:
            return pca_fit(data, k)
        full = pca_fit(data, min(data.shape[0], data.shape[1]))
        k = smallest_latent_dim(full.eigvals,
                                float(self.params.get("variance_threshold")))
        return PcaModel(full.mean, full.components[:k], full.eigvals)

    def save(self, model, path):
        save_pca(model, path)


class AeBuilder:
    """Factory product: trains an AeModel from warmup data per its params."""

    kind = "ae"

    def __init__(self, params):
        self.params = params

    def fit(self, data, rng=None):
        k = int(self.params.get("latent_dim"))
        if k <= 0:
            raise ValueError("srl.latent_dim must be explicit for the auto-encoder")
        model, _ = ae_fit(
            data, k,
            hidden=[int(h) for h in self.params.get("hidden")],
            activation=self.params.get("activation"),
            epochs=int(self.params.get("epochs")),
            batch_size=int(self.params.get("batch_size")),
            lr=float(self.params.get("lr")),
            rng=rng,
        )
        return model

    def save(self, model, path):
        nn.save_weights(model.encoder, path + ".enc")
        nn.save_weights(model.decoder, path + ".dec")
