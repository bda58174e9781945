"""Case-study measurements on one sentence, plus CSV/SVG export."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .checkpoint import load_checkpoint
from .data import SentenceBatch, tokenize
from .encoder import BRANCHES
from .masks import combine, mask_set
from .nli import NLIModel
from .tensor import NEG_INF_THRESHOLD, no_grad

DIRECTIONS = tuple(d for _, d in BRANCHES)
FORMATS = ("csv", "svg")


@dataclass
class CaseStudyReport:
    tokens: list[str]
    attn_per_head: dict[str, np.ndarray]     # direction -> (h, n, n)
    attn_avg: dict[str, np.ndarray]          # direction -> (n, n)
    gate_avg: dict[str, np.ndarray]          # direction -> (n,)
    ffn_deact_ratio: dict[str, np.ndarray]
    ffn_out_max: dict[str, np.ndarray]
    multidim_avg_weight: np.ndarray
    maxpool_ratio: np.ndarray
    allowed: dict[str, np.ndarray] = field(default_factory=dict)  # direction -> (n, n) bool

    @property
    def n(self) -> int:
        return len(self.tokens)

    def violations(self, tol: float = 1e-9) -> list[str]:
        """Broken invariants, as human-readable strings (empty when all hold)."""
        bad = []
        for d in DIRECTIONS:
            allowed = self.allowed[d]
            for label, mats in (("attn_avg", self.attn_avg[d][None]), ("attn_per_head", self.attn_per_head[d])):
                live = allowed.any(axis=1)
                sums = mats.sum(axis=-1)
                if np.any(np.abs(sums[:, live] - 1.0) > tol):
                    bad.append(f"{d} {label}: a live row does not sum to 1")
                if np.any(mats[:, ~allowed] != 0.0):
                    bad.append(f"{d} {label}: weight on a masked column")
            if np.abs(self.attn_avg[d] - self.attn_per_head[d].mean(axis=0)).max() != 0.0:
                bad.append(f"{d}: attn_avg is not the head mean")
            g = self.gate_avg[d]
            if not np.all((g > 0.0) & (g < 1.0)):
                bad.append(f"{d}: gate_avg outside (0, 1)")
            r = self.ffn_deact_ratio[d]
            if not np.all((r >= 0.0) & (r <= 1.0)):
                bad.append(f"{d}: ffn_deact_ratio outside [0, 1]")
        if abs(self.maxpool_ratio.sum() - 100.0) > tol:
            bad.append(f"maxpool_ratio sums to {self.maxpool_ratio.sum()!r}, not 100")
        return bad

    def artifacts(self) -> dict[str, dict[str, np.ndarray]]:
        """``{subdirectory: {artifact name: array}}`` in export order."""
        out: dict[str, dict[str, np.ndarray]] = {}
        for d in DIRECTIONS:
            arts = {"attn_avg": self.attn_avg[d]}
            for k, head in enumerate(self.attn_per_head[d]):
                arts[f"attn_head{k}"] = head
            arts.update(gate_avg=self.gate_avg[d], ffn_deact_ratio=self.ffn_deact_ratio[d],
                        ffn_out_max=self.ffn_out_max[d])
            out[d] = arts
        out["pooling"] = {"multidim_avg_weight": self.multidim_avg_weight,
                          "maxpool_ratio": self.maxpool_ratio}
        return out


def capture(sentence: str, model) -> CaseStudyReport:
    """One eval-mode forward pass over ``sentence`` with taps on every stage."""
    if not isinstance(model, NLIModel):
        model = load_checkpoint(model)
    if model.vocab is None:
        raise ValueError("model has no vocabulary; cannot index a raw sentence")
    tokens = tokenize(sentence)
    batch = SentenceBatch.from_sequences([model.vocab.encode(tokens)])
    taps: dict = {}
    with no_grad():
        enc = model.encode(batch, training=False, taps=taps)
    n, d_e = len(tokens), model.config.d_e
    masks = mask_set(n, float(model.config.alpha))

    per_head, avg, gate, deact, omax, allowed = {}, {}, {}, {}, {}, {}
    for d in DIRECTIONS:
        t = taps[d]
        per_head[d] = np.array(t["mha"]["weights"][0])
        avg[d] = per_head[d].mean(axis=0)
        gate[d] = t["gate"]["gate"][0].mean(axis=-1)
        deact[d] = (t["ffn"]["hidden"][0] == 0.0).mean(axis=-1)
        omax[d] = t["ffn"]["output"][0].max(axis=-1)
        allowed[d] = combine(masks, d, batch.pad_mask[0]) > NEG_INF_THRESHOLD
    multidim = taps["pool"]["weights"][0].mean(axis=-1)
    picks = np.bincount(np.asarray(enc.maxpool_argmax).reshape(-1), minlength=n)
    ratio = 100.0 * picks / (2 * d_e)
    return CaseStudyReport(tokens, per_head, avg, gate, deact, omax, multidim, ratio, allowed)


# ------------------------------------------------------------------ export

def _fmt(x: float) -> str:
    return repr(float(x))


def to_csv(values: np.ndarray, tokens: list[str]) -> str:
    """Token-labelled CSV. Matrices get tokens on both axes; vectors one row per token."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if values.ndim == 2:
        w.writerow([""] + tokens)
        for tok, row in zip(tokens, values):
            w.writerow([tok] + [_fmt(v) for v in row])
    else:
        w.writerow(["token", "value"])
        for tok, v in zip(tokens, values):
            w.writerow([tok, _fmt(v)])
    return buf.getvalue()


def _colour(t: float) -> str:
    # white -> dark blue
    lo, hi = np.array([255, 255, 255]), np.array([8, 48, 107])
    r, g, b = np.rint(lo + (hi - lo) * t).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def to_svg(values: np.ndarray, tokens: list[str], title: str = "") -> str:
    """Standalone heatmap, colour scaled per matrix to ``[0, max]``."""
    mat = values if values.ndim == 2 else values[None, :]
    rows_lab = tokens if values.ndim == 2 else [""]
    cell, left, top = 28, 110, 110
    width, height = left + cell * mat.shape[1] + 10, top + cell * mat.shape[0] + 10
    peak = float(mat.max()) if mat.size else 0.0
    scale = peak if peak > 0 else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if title:
        out.append(f'<title>{escape(title)}</title>')
    for j, tok in enumerate(tokens):
        x = left + cell * j + cell // 2
        out.append(f'<text x="{x}" y="{top - 6}" transform="rotate(-60 {x} {top - 6})">{escape(tok)}</text>')
    for i, tok in enumerate(rows_lab):
        y = top + cell * i + cell // 2 + 4
        out.append(f'<text x="{left - 6}" y="{y}" text-anchor="end">{escape(tok)}</text>')
        for j in range(mat.shape[1]):
            v = float(mat[i, j])
            fill = _colour(min(max(v / scale, 0.0), 1.0))
            out.append(f'<rect x="{left + cell * j}" y="{top + cell * i}" width="{cell}" height="{cell}" '
                       f'fill={quoteattr(fill)}><title>{escape(_fmt(v))}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export(report: CaseStudyReport, out_dir, formats=FORMATS) -> list[Path]:
    """Write ``out_dir/{direction}/{artifact}.{ext}``; returns the written paths."""
    formats = tuple(formats)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown export formats {sorted(unknown)}; choose from {FORMATS}")
    out_dir = Path(out_dir)
    written = []
    for sub, arts in report.artifacts().items():
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
        for name, values in arts.items():
            values = np.asarray(values, dtype=np.float64)
            if "csv" in formats:
                p = out_dir / sub / f"{name}.csv"
                p.write_text(to_csv(values, report.tokens), encoding="utf-8", newline="")
                written.append(p)
            if "svg" in formats:
                p = out_dir / sub / f"{name}.svg"
                p.write_text(to_svg(values, report.tokens, f"{sub} {name}"), encoding="utf-8")
                written.append(p)
    return written
