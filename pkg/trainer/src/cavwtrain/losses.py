"""Training criteria: the conditional-VAE bound, classifier terms, their
estimated-label (Gumbel-Softmax) variants, and the teacher-student
distillation divergences.

Sign convention: every term here is the quantity to be *maximized* (the KD
divergences enter the total with negative weights). All terms are means over
the batch and sums over tensor dimensions within a sample.
"""

import math
from dataclasses import dataclass, field

import torch

from .gumbel import gumbel_softmax_sample

EPS = 1e-10


@dataclass
class TrainConfig:
    """Criterion weights and optimization settings. Defaults: the latent
    distillation weight is 10, every other weight 1, temperature 1."""

    lambda_l: float = 1.0
    lambda_i: float = 1.0
    lambda_jp: float = 1.0
    lambda_lp: float = 1.0
    lambda_kz: float = 10.0
    lambda_ks: float = 1.0
    lambda_kps: float = 1.0
    tau: float = 1.0
    latent_dim: int = 8
    class_count: int = 2
    epochs: int = 40
    batch: int = 8
    lr: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.15

    def __post_init__(self):
        for name in ("lambda_l", "lambda_i", "lambda_jp", "lambda_lp",
                     "lambda_kz", "lambda_ks", "lambda_kps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def from_json(cls, path):
        import json

        doc = json.loads(open(path).read())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields in {path}: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class LossReport:
    """Per-term criterion values recorded every step."""

    j: list = field(default_factory=list)
    l: list = field(default_factory=list)
    i: list = field(default_factory=list)
    jp_gs: list = field(default_factory=list)
    lp_gs: list = field(default_factory=list)
    k_z: list = field(default_factory=list)
    k_s: list = field(default_factory=list)
    kp_s: list = field(default_factory=list)
    total: list = field(default_factory=list)

    def append(self, terms):
        for key, value in terms.items():
            v = float(value.detach() if hasattr(value, "detach") else value)
            getattr(self, key).append(v)
            if not math.isfinite(v):
                raise FloatingPointError(f"criterion term {key} became non-finite")


# ---------------------------------------------------------------------------
# closed-form pieces
# ---------------------------------------------------------------------------

def complex_gaussian_nll(power, log_var):
    """sum(log v + p / v) per sample, batch-averaged (constants dropped)."""
    return (log_var + power * torch.exp(-log_var)).sum(dim=(-2, -1)).mean()


def kl_standard_normal(mu, log_var):
    """KL(N(mu, diag e^logvar) || N(0, I)), batch-averaged."""
    return 0.5 * (mu**2 + torch.exp(log_var) - log_var - 1.0).sum(dim=(-2, -1)).mean()


def kl_diag_gaussians(mu_q, logvar_q, mu_p, logvar_p):
    """KL(q || p) between diagonal Gaussians, batch-averaged."""
    term = 0.5 * (
        logvar_p - logvar_q
        + (torch.exp(logvar_q) + (mu_q - mu_p) ** 2) * torch.exp(-logvar_p)
        - 1.0
    )
    return term.sum(dim=(-2, -1)).mean()


def kl_complex_gaussian_fields(logv_ref, logv_other):
    """Per-TF-bin KL between zero-mean complex Gaussians,
    sum of log(v2/v1) + v1/v2 - 1 with v1 the reference; batch-averaged."""
    diff = logv_other - logv_ref
    return (diff + torch.exp(-diff) - 1.0).sum(dim=(-2, -1)).mean()


def _log_softmax_score(logits, target):
    """sum target * log softmax(logits), batch-averaged (soft targets allowed)."""
    return (target * torch.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


# ---------------------------------------------------------------------------
# noise control (one Monte-Carlo sample per expectation per step)
# ---------------------------------------------------------------------------

def sample_noise(batch_shape, latent_shape, class_count, generator=None, dtype=torch.float32):
    """Draw every random input a student step consumes, so a step can be
    replayed bit-for-bit (used by the finite-difference gradient checks)."""
    b, f, n = batch_shape
    def normal(*shape):
        return torch.randn(*shape, generator=generator, dtype=dtype)
    def uniform(*shape):
        return torch.rand(*shape, generator=generator, dtype=dtype)
    return {
        "eps_z": normal(b, *latent_shape),
        "eps_z_teacher": normal(b, *latent_shape),
        "gumbel_j": uniform(b, class_count),
        "gumbel_l": uniform(b, class_count),
        "gen_a": normal(b, f, n),
        "gen_b": normal(b, f, n),
        "gen_a2": normal(b, f, n),
        "gen_b2": normal(b, f, n),
        "class_pick": torch.randint(0, class_count, (b,), generator=generator),
    }


def _generated_features(log_var, eps_a, eps_b):
    """Reparameterized power sample from the decoder distribution, converted
    to the engine's feature representation (mean-power gain normalized)."""
    power = torch.exp(log_var) * 0.5 * (eps_a**2 + eps_b**2)
    gain = torch.clamp(power.mean(dim=(-2, -1), keepdim=True), min=EPS)
    return torch.log(power / gain + EPS)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def teacher_elbo(teacher, feat, power, labels, noise_eps=None, generator=None):
    """Variational bound of the class-conditioned model: reparameterized
    reconstruction log-likelihood minus the closed-form Gaussian KL."""
    mu, log_var = teacher.encoder(feat, labels)
    eps = noise_eps if noise_eps is not None else torch.randn(
        mu.shape, generator=generator, dtype=mu.dtype
    )
    z = mu + torch.exp(0.5 * log_var) * eps
    log_v = teacher.decoder(z, labels, n_frames=power.shape[-1])
    recon = -complex_gaussian_nll(power, log_v)
    kl = kl_standard_normal(mu, log_var)
    return recon - kl, {"recon": float(recon.detach()), "kl": float(kl.detach())}


def student_losses(batch, teacher, student, cfg: TrainConfig, noise=None, generator=None):
    """All student criteria for one batch.

    batch: (features, power, labels); teacher is frozen (no_grad on its
    side is the caller's responsibility for speed; gradients never flow into
    it here because its terms are treated as references).
    Returns (total_to_maximize, term dict).
    """
    feat, power, labels = batch
    b, f, n = power.shape
    mu_s, logvar_s, logits = student.encoder(feat)
    rho = torch.softmax(logits, dim=-1)
    if noise is None:
        noise = sample_noise((b, f, n), mu_s.shape[1:], cfg.class_count,
                             generator=generator, dtype=feat.dtype)
    z_s = mu_s + torch.exp(0.5 * logvar_s) * noise["eps_z"]

    # reconstruction with the true label + prior KL
    logv_true = student.decoder(z_s, labels, n_frames=n)
    j = -complex_gaussian_nll(power, logv_true) - kl_standard_normal(mu_s, logvar_s)

    # classifier on real data
    i_term = _log_softmax_score(logits, labels)

    # classify a spectrogram generated under a label drawn from the empirical
    # class distribution
    c_rand = torch.nn.functional.one_hot(noise["class_pick"], cfg.class_count).to(feat.dtype)
    logv_rand = student.decoder(z_s, c_rand, n_frames=n)
    feat_gen = _generated_features(logv_rand, noise["gen_a"], noise["gen_b"])
    l_term = _log_softmax_score(student.classify(feat_gen), c_rand)

    # estimated-label variants through the Gumbel-Softmax relaxation
    k = gumbel_softmax_sample(rho, cfg.tau, noise=noise["gumbel_j"])
    logv_k = student.decoder(z_s, k, n_frames=n)
    jp = -complex_gaussian_nll(power, logv_k)

    k2 = gumbel_softmax_sample(rho, cfg.tau, noise=noise["gumbel_l"])
    logv_k2 = student.decoder(z_s, k2, n_frames=n)
    feat_gen2 = _generated_features(logv_k2, noise["gen_a2"], noise["gen_b2"])
    lp = _log_softmax_score(student.classify(feat_gen2), k2)

    # distillation references from the frozen teacher
    with torch.no_grad():
        mu_t, logvar_t = teacher.encoder(feat, labels)
        z_t = mu_t + torch.exp(0.5 * logvar_t) * noise["eps_z_teacher"]
        logv_teacher = teacher.decoder(z_t, labels, n_frames=n)
    k_z = kl_diag_gaussians(mu_t, logvar_t, mu_s, logvar_s)
    k_s = kl_complex_gaussian_fields(logv_teacher, logv_true)
    kp_s = kl_complex_gaussian_fields(logv_teacher, logv_k)

    total = (
        j
        + cfg.lambda_l * l_term
        + cfg.lambda_i * i_term
        + cfg.lambda_jp * jp
        + cfg.lambda_lp * lp
        - cfg.lambda_kz * k_z
        - cfg.lambda_ks * k_s
        - cfg.lambda_kps * kp_s
    )
    terms = {
        "j": j, "l": l_term, "i": i_term, "jp_gs": jp, "lp_gs": lp,
        "k_z": k_z, "k_s": k_s, "kp_s": kp_s, "total": total,
    }
    return total, terms


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def gradient_check(scalar_fn, module, n_probes=6, h=1e-4, seed=0):
    """Compare autograd gradients of scalar_fn() against central finite
    differences at randomly probed parameters of `module`.

    scalar_fn must be deterministic (frozen noise). Returns the maximum
    relative error over the probes.
    """
    module.zero_grad(set_to_none=True)
    value = scalar_fn()
    value.backward()
    # only parameters that participate in this term carry gradients
    params = [p for p in module.parameters() if p.requires_grad and p.grad is not None]
    if not params:
        raise ValueError("no parameter of the module receives a gradient from scalar_fn")
    rng = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_probes):
        pi = int(torch.randint(0, len(params), (1,), generator=rng))
        p = params[pi]
        flat_idx = int(torch.randint(0, p.numel(), (1,), generator=rng))
        analytic = float(p.grad.reshape(-1)[flat_idx])
        with torch.no_grad():
            orig = float(p.reshape(-1)[flat_idx])
            step = h * max(1.0, abs(orig))
            p.reshape(-1)[flat_idx] = orig + step
            up = float(scalar_fn())
            p.reshape(-1)[flat_idx] = orig - step
            down = float(scalar_fn())
            p.reshape(-1)[flat_idx] = orig
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
