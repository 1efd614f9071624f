"""Two-stage training loops, inference and evaluation helpers.

Generator and discriminator steps alternate. During the generator step the
discriminator parameters are frozen; during the discriminator step the fake
images enter as detached constants, so neither step writes gradients into the
other's parameters.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import degradation as dg
from .. import hq_dictionary as hqd
from .. import losses as L
from ..metrics import angle_between, psnr
from ..model import HQGenerator, RestoreFormer
from ..rng import Rng
from ..tensor import AdamState, NonFiniteError, Tape, Tensor, adam_step, no_grad, ops
from . import checkpoint
from .config import StageConfig
from .synthetic import load_dataset, make_faces

log = logging.getLogger(__name__)

DICT_COLUMNS = ("iteration", "lr", "l1", "per", "adv", "d", "c", "total", "disc", "codes_used")
RESTORE_COLUMNS = ("iteration", "lr", "l1", "per", "p", "disc", "style", "adv", "id", "total",
                   "d_global", "d_regions")


class TrainingDiverged(FloatingPointError):
    def __init__(self, term, iteration, detail=""):
        self.term = term
        self.iteration = iteration
        super().__init__(f"non-finite loss term {term!r} at iteration {iteration}"
                         + (f": {detail}" if detail else ""))


def _term(name, it, fn):
    try:
        v = fn()
    except (NonFiniteError, FloatingPointError) as e:
        raise TrainingDiverged(name, it, str(e)) from e
    if not np.isfinite(v.data).all():
        raise TrainingDiverged(name, it)
    return v


_ZERO = Tensor(0.0)


@dataclass
class LossLog:
    columns: tuple
    header: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, **values):
        self.rows.append(tuple(values[c] for c in self.columns))

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def to_text(self):
        lines = [f"# {h}" for h in self.header]
        lines.append(",".join(self.columns))
        for r in self.rows:
            lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else repr(float(v)) for v in r))
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text())


@dataclass
class TrainResult:
    config: StageConfig
    model: object
    log: LossLog
    checkpoint: Path = None
    csv: Path = None


def weights_header(cfg, stage):
    w = cfg.dict_weights() if stage == "dict" else cfg.restore_weights()
    return ["stage=" + stage,
            " ".join(f"lambda_{k}={v!r}" for k, v in w.items()),
            f"lr={cfg.lr!r} decay_at={cfg.lr_decay_at!r} decay_factor={cfg.lr_decay_factor!r} "
            f"iterations={cfg.iterations} batch={cfg.batch_size} seed={cfg.seed}"]


def dataset(cfg, images=None):
    if images is not None:
        return np.asarray(images, dtype=np.float64)
    if cfg.data_dir:
        return load_dataset(cfg.data_dir)[1]
    return make_faces(cfg.dataset_size, cfg.image_size, cfg.data_seed, cfg.boxes())[0]


def batch_indices(cfg, n, it):
    k = min(cfg.batch_size, n)
    return np.sort(Rng(cfg.seed, 0xBA7C, it).permutation(n)[:k])


def _finish(result, out_dir, stage):
    if out_dir is None:
        return result
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.checkpoint = out / f"{stage}.pfck"
    result.csv = out / f"{stage}_loss.csv"
    checkpoint.save(result.checkpoint, result.model.store.state_dict(), result.config.to_text())
    result.log.write(result.csv)
    return result


def _assert_isolated(store, names, who):
    leaked = [n for n in names if store[n].grad is not None]
    if leaked:
        raise RuntimeError(f"{who} step wrote gradients into {leaked[:3]}")


# ---------------------------------------------------------------- stage 1

def train_dict(cfg, images=None, out_dir=None, quantize=True, progress=None):
    """Stage 1: optimise L_Dict over encoder, decoder, codebook and discriminator.

    ``quantize=False`` trains the same encoder/decoder as a plain autoencoder
    (no dictionary), the reference used to judge the quantised run.
    """
    data = dataset(cfg, images)
    model = HQGenerator(cfg.model_config(), cfg.seed, quantize=quantize)
    store = model.store
    phi = L.FeaturePyramid(cfg.stand_in_seed)
    use_adv = cfg.lambda_adv > 0
    disc = L.Discriminator(store, "disc", cfg.seed) if use_adv else None
    g_names = model.names("encoder", "decoder")
    if quantize and cfg.lambda_d > 0:
        # with the straight-through copy, L'_d is the codebook's only gradient path
        g_names.append("dictionary.entries")
    d_names = disc.names() if use_adv else []
    g_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    d_opt = AdamState(lr=cfg.disc_lr or cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    trace = LossLog(DICT_COLUMNS, weights_header(cfg, "dict") + ([] if quantize else ["autoencoder reference"]))
    weights = cfg.dict_weights()
    if not quantize:
        weights = dict(weights, d=0.0, c=0.0)

    for it in range(cfg.iterations):
        lr = cfg.lr_at(it)
        x = Tensor(data[batch_indices(cfg, len(data), it)])
        store.set_requires_grad(False, "disc")
        with Tape() as tape:
            out = model(x)
            img = out.image
            parts = {"l1": _term("l1", it, lambda: ops.l1_loss(x, img))}
            parts["per"] = _term("per", it, lambda: L.perceptual_loss(x, img, phi)) if weights["per"] else _ZERO
            parts["adv"] = _term("adv", it, lambda: L.generator_adversarial(disc(img))) if use_adv else _ZERO
            if quantize:
                l_d, l_c = hqd.dict_losses(out.z, out.z_p)
                parts["d"] = _term("d", it, lambda: l_d)
                parts["c"] = _term("c", it, lambda: l_c)
            else:
                parts["d"] = parts["c"] = _ZERO
            total = _term("total", it, lambda: L.total_dict_loss(parts, weights))
            tape.backward(total)
        _assert_isolated(store, d_names, "generator")
        adam_step(store, g_opt, g_names, lr)

        d_loss = 0.0
        if use_adv:
            store.set_requires_grad(True, "disc")
            fake = Tensor(img.data)
            with Tape() as tape:
                ld = _term("disc", it, lambda: L.discriminator_loss(disc(x), disc(fake)))
                tape.backward(ld)
            _assert_isolated(store, g_names, "discriminator")
            adam_step(store, d_opt, d_names, cfg.lr_at(it, d_opt.lr))
            d_loss = float(ld.data)

        used = int((hqd.usage_histogram(out.indices, cfg.codebook_size) > 0).sum()) if quantize else 0
        trace.add(iteration=it, lr=lr, total=float(total.data), disc=d_loss, codes_used=used,
                  **{k: float(parts[k].data) for k in L.DICT_TERMS})
        if progress and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            progress(f"[dict] it={it} l1={float(parts['l1'].data):.5f} total={float(total.data):.5f} codes={used}")
    store.set_requires_grad(True, "disc")
    return _finish(TrainResult(cfg, model, trace), out_dir, "stage1" if quantize else "autoencoder")


def codebook_usage(model, images):
    """Distinct codebook entries selected over a set of images."""
    with no_grad():
        idx = model(Tensor(np.asarray(images))).indices
    return int((hqd.usage_histogram(idx, model.cfg.codebook_size) > 0).sum())


# ---------------------------------------------------------------- stage 2

def sample_degradations(cfg, it, n):
    specs = []
    for b in range(n):
        rng = Rng(cfg.seed, 0xDE6, it, b)
        specs.append(dg.sample_spec(rng, int(rng.integers(0, 2 ** 31)), cfg.image_size,
                                    cfg.sigma_range, cfg.scale_range, cfg.noise_range, cfg.quality_range))
    return specs


def build_restorer(cfg, stage1_state):
    model = RestoreFormer(cfg.model_config(), cfg.seed)
    entries = stage1_state.get("dictionary.entries")
    if entries is None or entries.shape != (cfg.codebook_size, cfg.z_channels):
        got = None if entries is None else entries.shape
        raise ValueError(f"stage-1 dictionary {got} does not match config ({cfg.codebook_size}, {cfg.z_channels})")
    model.load_stage1(stage1_state)
    with no_grad():
        z = model.encode(np.zeros((1, cfg.image_size, cfg.image_size, 3)))
    expect = (1, cfg.latent_size, cfg.latent_size, cfg.z_channels)
    if z.shape != expect:
        raise ValueError(f"loaded encoder latent {z.shape} != expected {expect}")
    return model


def train_restorer(cfg, stage1_state=None, images=None, out_dir=None, progress=None):
    """Stage 2: optimise L_RF with on-the-fly degradations and alternating D steps."""
    if stage1_state is None:
        stage1_state, _ = checkpoint.load(cfg.stage1_checkpoint)
    data = dataset(cfg, images)
    model = build_restorer(cfg, stage1_state)
    store = model.store
    boxes = cfg.boxes()
    phi = L.FeaturePyramid(cfg.stand_in_seed)
    eta = L.IdentityNet(cfg.stand_in_seed)
    w = cfg.restore_weights()
    disc = L.Discriminator(store, "disc", cfg.seed) if w["adv"] else None
    use_regions = bool(w["disc"] or w["style"])
    regions = {r: L.Discriminator(store, f"disc_{r}", cfg.seed, widths=(8, 16)) for r in L.REGIONS} \
        if use_regions else {}

    g_names = model.names("encoder", "decoder", "mhca1", "mhca2")
    if cfg.train_dictionary:
        g_names.append("dictionary.entries")
    else:
        store.set_requires_grad(False, "dictionary")
    d_prefixes = (["disc"] if disc else []) + [f"disc_{r}" for r in regions]
    d_names = [n for p in d_prefixes for n in store.names(p)]
    g_opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    d_opt = AdamState(lr=cfg.disc_lr or cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    trace = LossLog(RESTORE_COLUMNS, weights_header(cfg, "restore"))

    def freeze_d(flag):
        for p in d_prefixes:
            store.set_requires_grad(flag, p)

    for it in range(cfg.iterations):
        lr = cfg.lr_at(it)
        idx = batch_indices(cfg, len(data), it)
        hq = data[idx]
        lq = dg.degrade_batch(hq, sample_degradations(cfg, it, len(idx)))
        x_h, x_d = Tensor(hq), Tensor(lq)
        freeze_d(False)
        with Tape() as tape:
            out = model(x_d)
            img = out.image
            l1, per, lp = L.pixel_losses(x_h, img, out.z, out.z_p, phi, prior_grad=cfg.prior_grad)
            parts = {"l1": _term("l1", it, lambda: l1),
                     "per": _term("per", it, lambda: per),
                     "p": _term("p", it, lambda: lp)}
            if use_regions:
                l_disc, l_style = L.component_losses(x_h, img, boxes, regions, cfg.crop_size)
                parts["disc"] = _term("disc", it, lambda: l_disc)
                parts["style"] = _term("style", it, lambda: l_style)
            else:
                parts["disc"] = parts["style"] = _ZERO
            parts["adv"] = _term("adv", it, lambda: L.generator_adversarial(disc(img))) if disc else _ZERO
            parts["id"] = _term("id", it, lambda: L.identity_loss(x_h, img, eta)) if w["id"] else _ZERO
            total = _term("total", it, lambda: L.total_restore_loss(parts, w))
            tape.backward(total)
        _assert_isolated(store, d_names, "generator")
        adam_step(store, g_opt, g_names, lr)

        dg_loss = dr_loss = 0.0
        if d_names:
            freeze_d(True)
            fake = Tensor(img.data)
            with Tape() as tape:
                terms = []
                if disc:
                    lg = _term("d_global", it, lambda: L.discriminator_loss(disc(x_h), disc(fake)))
                    terms.append(lg)
                    dg_loss = float(lg.data)
                if regions:
                    lr_ = _term("d_regions", it,
                                lambda: L.region_discriminator_loss(x_h, fake, boxes, regions, cfg.crop_size))
                    terms.append(lr_)
                    dr_loss = float(lr_.data)
                d_total = terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])
                tape.backward(d_total)
            _assert_isolated(store, g_names, "discriminator")
            adam_step(store, d_opt, d_names, cfg.lr_at(it, d_opt.lr))

        trace.add(iteration=it, lr=lr, total=float(total.data), d_global=dg_loss, d_regions=dr_loss,
                  **{k: float(parts[k].data) for k in L.RESTORE_TERMS})
        if progress and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            progress(f"[restore] it={it} l1={float(parts['l1'].data):.5f} total={float(total.data):.5f}")
    freeze_d(True)
    return _finish(TrainResult(cfg, model, trace), out_dir, "stage2")


# ---------------------------------------------------------------- inference

def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(config, model)``."""
    state, text = checkpoint.load(path)
    if text is None:
        raise checkpoint.CheckpointError(f"{path}: no embedded config")
    cfg = StageConfig.from_text(text)
    if cfg.stage == "dict":
        model = HQGenerator(cfg.model_config(), cfg.seed, quantize="dictionary.entries" in state)
        if cfg.lambda_adv > 0:
            L.Discriminator(model.store, "disc", cfg.seed)
    else:
        model = RestoreFormer(cfg.model_config(), cfg.seed)
        if cfg.lambda_adv:
            L.Discriminator(model.store, "disc", cfg.seed)
        if cfg.lambda_disc or cfg.lambda_style:
            for r in L.REGIONS:
                L.Discriminator(model.store, f"disc_{r}", cfg.seed, widths=(8, 16))
    model.store.load_state_dict(state)
    return cfg, model


def run_model(model, images, batch=8):
    """Forward in inference mode; returns (outputs (B,H,W,3), attention list per image)."""
    images = np.asarray(images, dtype=np.float64)
    outs, attn = [], []
    with no_grad():
        for s in range(0, len(images), batch):
            o = model(Tensor(images[s:s + batch]))
            outs.append(o.image.data)
            if o.attention:
                for b in range(o.image.shape[0]):
                    attn.append([a[b] for a in o.attention])
    return np.concatenate(outs), attn


def attention_images(maps, scale=8):
    """Per MHCA block and head, an (L*scale, L*scale) grayscale map normalised to [0, 1]."""
    out = []
    for block, a in enumerate(maps, 1):
        for head in range(a.shape[0]):
            m = a[head]
            m = (m - m.min()) / (m.max() - m.min()) if m.max() > m.min() else np.zeros_like(m)
            out.append((f"mhca{block}_head{head}", np.kron(m, np.ones((scale, scale)))))
    return out


def eval_degradations(cfg, n, seed=None):
    seed = cfg.seed + 7919 if seed is None else seed
    specs = []
    for i in range(n):
        rng = Rng(seed, 0xE7A1, i)
        specs.append(dg.sample_spec(rng, int(rng.integers(0, 2 ** 31)), cfg.image_size,
                                    cfg.sigma_range, cfg.scale_range, cfg.noise_range, cfg.quality_range))
    return specs


@dataclass
class RestorationEval:
    psnr_degraded: np.ndarray
    psnr_restored: np.ndarray
    idd_degraded: np.ndarray
    idd_restored: np.ndarray

    @property
    def psnr_gain(self):
        return float(self.psnr_restored.mean() - self.psnr_degraded.mean())


def evaluate_restoration(model, images, cfg, eta=None, seed=None):
    """PSNR and IDD of degraded inputs and restored outputs against the clean images."""
    images = np.asarray(images, dtype=np.float64)
    eta = eta or L.IdentityNet(cfg.stand_in_seed)
    lq = dg.degrade_batch(images, eval_degradations(cfg, len(images), seed))
    restored, _ = run_model(model, lq)
    e_h, e_d, e_r = eta.embed_numpy(images), eta.embed_numpy(lq), eta.embed_numpy(restored)
    return RestorationEval(
        np.array([psnr(d, h) for d, h in zip(lq, images)]),
        np.array([psnr(r, h) for r, h in zip(restored, images)]),
        np.array([angle_between(a, b) for a, b in zip(e_d, e_h)]),
        np.array([angle_between(a, b) for a, b in zip(e_r, e_h)]),
    )
