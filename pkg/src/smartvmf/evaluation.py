"""Clean and certified accuracy over ablation votes, the attack/defense sweep, and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ablation import AblationSet, AblationSpec, generate_ablations
from .adversary import AttackConfig, patch_side, train_lavan
from .filters import FilterConfig, classic_vmf, smart_vmf

log = logging.getLogger(__name__)

# (number of patches, percent of image area per patch)
ATTACK_GRID: tuple[tuple[int, int], ...] = ((1, 1), (2, 1), (1, 2), (3, 1), (1, 3), (4, 1), (1, 4))
NO_ATTACK = (0, 0)
DEFENSES = ("none", "classic-vmf", "smoothed-only", "filtered")
REPORT_COLUMNS = ("image_id", "attack_n", "attack_pct", "defense", "clean", "robust", "n_ablations", "delta")


class InvariantViolation(RuntimeError):
    """A consistency check failed during a sweep."""


@dataclass
class AblationVote:
    counts: np.ndarray  # (K,) ints

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def majority(self) -> int:
        return int(np.argmax(self.counts))


@dataclass
class EvalRecord:
    image_id: int
    true_class: int
    defense: str
    attack_n: int
    attack_pct: int
    clean: float
    robust: bool
    n_ablations: int
    delta: float
    vote: AblationVote | None = field(default=None, repr=False)

    @property
    def clean_correct(self) -> bool:
        return self.vote is not None and self.vote.majority() == self.true_class

    def row(self) -> tuple:
        return (self.image_id, self.attack_n, self.attack_pct, self.defense, self.clean, int(self.robust), self.n_ablations, self.delta)


def _predict_classes(model, images: np.ndarray) -> np.ndarray:
    logits = np.asarray(model.predict_logits(images))
    if logits.ndim == 2 and logits.shape[0] == len(images):
        return np.argmax(logits, axis=1)
    return np.array([int(np.argmax(model.predict_logits(im))) for im in images])


def vote(model, ablations: AblationSet | np.ndarray) -> AblationVote:
    images = ablations.images if isinstance(ablations, AblationSet) else np.asarray(ablations)
    if len(images) == 0:
        raise ValueError("ablation set is empty")
    preds = _predict_classes(model, images)
    return AblationVote(np.bincount(preds, minlength=model.num_classes).astype(np.int64))


def clean_accuracy(model, ablations: AblationSet | np.ndarray, c: int) -> tuple[float, AblationVote]:
    """Fraction of ablations classified as ``c`` (in [0, 1]) plus the vote histogram."""
    v = vote(model, ablations)
    return float(v.counts[c]) / v.n, v


def robust_certified(vote: AblationVote, c: int, delta: float) -> bool:
    """True iff the vote for ``c`` beats every other class by more than ``2 * delta * n``."""
    counts = np.asarray(vote.counts if isinstance(vote, AblationVote) else vote)
    n = int(counts.sum())
    others = np.delete(counts, c)
    runner_up = int(others.max()) if len(others) else 0
    return bool(counts[c] > runner_up + 2.0 * delta * n)


def certification_delta(spec: AblationSpec, h: int, w: int, attack_n: int, attack_pct: int) -> float:
    """Overlap bound for the threat model; multi-patch attacks compose by the union bound.

    The no-attack row is certified against the weakest grid threat, a single
    1%-area patch.
    """
    if attack_n == 0:
        attack_n, attack_pct = 1, 1
    m = patch_side(attack_pct / 100.0, h, w)
    return min(1.0, attack_n * spec.delta(h, w, m))


def defend(img, defense: str, filter_cfg: FilterConfig, vmf_side: int):
    if defense in ("none", "smoothed-only"):
        return img
    if defense == "filtered":
        return smart_vmf(img, None, filter_cfg)
    if defense == "classic-vmf":
        return classic_vmf(img, vmf_side)
    raise ValueError(f"unknown defense {defense!r}; choose from {DEFENSES}")


def _spec_for(defense: str, spec: AblationSpec, w: int) -> AblationSpec:
    # "none" votes over w identical full-width bands, i.e. the plain classifier
    return AblationSpec("band", w, 1, spec.fill) if defense == "none" else spec


def evaluate_image(
    model,
    img,
    c: int,
    defense: str,
    spec: AblationSpec,
    attack: tuple[int, int] = NO_ATTACK,
    filter_cfg: FilterConfig | None = None,
    image_id: int = 0,
    vmf_side: int = 3,
) -> EvalRecord:
    filter_cfg = filter_cfg or FilterConfig()
    h, w = img.shape[:2]
    defended = defend(img, defense, filter_cfg, vmf_side)
    dspec = _spec_for(defense, spec, w)
    ablations = generate_ablations(defended, dspec)
    delta = certification_delta(dspec, h, w, *attack)
    frac, v = clean_accuracy(model, ablations, c)
    robust = robust_certified(v, c, delta)
    if v.n != ablations.n:
        raise InvariantViolation(f"vote total {v.n} != ablation count {ablations.n}")
    if robust and v.majority() != c:
        raise InvariantViolation("certified prediction disagrees with the vote majority")
    return EvalRecord(image_id, int(c), defense, attack[0], attack[1], frac, robust, ablations.n, delta, v)


def run_sweep(
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    model,
    defenses: Iterable[str] = DEFENSES,
    attacks: Iterable[tuple[int, int]] = (NO_ATTACK,) + ATTACK_GRID,
    spec: AblationSpec | None = None,
    seed: int = 7,
    filter_cfg: FilterConfig | None = None,
    attack_cfg: AttackConfig | None = None,
    dump=None,
    vmf_side: int = 3,
) -> list[EvalRecord]:
    """Attack every image under every grid cell, defend, and score.

    Defenses run filter first, then ablation and voting. Patch targets are
    drawn once per image from ``seed``; patches are trained against the
    undefended model. ``dump``, if given, is called as
    ``dump(image_id, attack, defense, stage, image)``.
    """
    spec = spec or AblationSpec()
    filter_cfg = filter_cfg or FilterConfig()
    attack_cfg = attack_cfg or AttackConfig()
    defenses = tuple(defenses)
    attacks = tuple(attacks)
    rng = np.random.default_rng(seed)
    k = model.num_classes
    records = []
    for idx, (img, c) in enumerate(zip(images, labels)):
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[:2]
        source = int(np.argmax(model.predict_logits(img)))
        target = int(rng.choice([t for t in range(k) if t != source]))
        for attack in attacks:
            n_patches, pct = attack
            if n_patches == 0:
                attacked = img
            else:
                cfg = AttackConfig(
                    target_class=target,
                    target_prob=attack_cfg.target_prob,
                    step=attack_cfg.step,
                    max_iters=attack_cfg.max_iters,
                    area_fraction=pct / 100.0,
                    n_patches=n_patches,
                    ascent=attack_cfg.ascent,
                    competitor=attack_cfg.competitor,
                )
                attacked = train_lavan(img, model, cfg, seed=seed).adversarial
            if dump is not None:
                dump(idx, attack, None, "attacked", attacked)
            for defense in defenses:
                rec = evaluate_image(model, attacked, int(c), defense, spec, attack, filter_cfg, idx, vmf_side)
                records.append(rec)
                if dump is not None and defense in ("filtered", "classic-vmf"):
                    dump(idx, attack, defense, "filtered", defend(attacked, defense, filter_cfg, vmf_side))
        log.debug("image %d done", idx)
    records.sort(key=lambda r: (r.image_id, r.attack_n, r.attack_pct, DEFENSES.index(r.defense) if r.defense in DEFENSES else 99))
    return records


def summarize(records: Iterable[EvalRecord]) -> dict[tuple[int, int, str], tuple[float, float]]:
    """Mean (clean, robust) per (attack_n, attack_pct, defense) cell."""
    cells: dict[tuple[int, int, str], list[EvalRecord]] = {}
    for r in records:
        cells.setdefault((r.attack_n, r.attack_pct, r.defense), []).append(r)
    return {
        key: (float(np.mean([r.clean for r in rs])), float(np.mean([r.robust for r in rs])))
        for key, rs in sorted(cells.items())
    }


def write_report(records: Iterable[EvalRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in records:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])
    return buf.getvalue().encode("utf-8")


def read_report(data: bytes) -> list[tuple]:
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise ValueError("not a sweep report: header mismatch")
    out = []
    for row in rows[1:]:
        image_id, an, ap, defense, clean, robust, n, delta = row
        out.append((int(image_id), int(an), int(ap), defense, float(clean), int(robust), int(n), float(delta)))
    return out
