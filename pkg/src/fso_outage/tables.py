"""Summary tables: minimum AWGN SNR per (Q, Rc) and CSIR/CSIT SNR requirements per model."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .csit import csit_snr_at, lt_snr_threshold
from .outage_csir import fmt, snr_r
from .ppm import InfoTable, MonteCarloSpec, get_table
from .scintillation import ChannelConfig, ScintillationModel, get_distribution

Q_VALUES = (2, 4, 8, 16)
RC_VALUES = (0.25, 0.5, 0.75)
TARGET_P = 1e-5


def _db(x: float) -> float:
    return math.inf if math.isinf(x) else 10.0 * math.log10(x)


def min_snr_table(q_values=Q_VALUES, rc_values=RC_VALUES, mc: MonteCarloSpec = MonteCarloSpec(),
                  cache_dir=None) -> list[dict]:
    """``snr_R`` in dB for ``R = Rc log2 Q`` over the (Q, Rc) grid."""
    rows = []
    for Q in q_values:
        table = get_table(Q, mc, cache_dir)
        for rc in rc_values:
            rows.append({"Q": Q, "Rc": rc, "R_bits": rc * math.log2(Q),
                         "snr_db": _db(table.inv_mi(rc * math.log2(Q)))})
    return rows


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    MN: int
    snr_star_db: float
    snr_bar_db: float
    csit_snr_at_target_db: float

    @property
    def bar_is_infinite(self) -> bool:
        """Whether ``snr_bar`` is infinite and the CSIT column reports the SNR at the target outage."""
        return math.isinf(self.snr_bar_db)

    @property
    def csit_reported_db(self) -> float:
        return self.csit_snr_at_target_db if self.bar_is_infinite else self.snr_bar_db


def default_models() -> dict[str, ScintillationModel]:
    return {"lognormal": ScintillationModel.lognormal(1.0),
            "exponential": ScintillationModel.exponential(),
            "gamma-gamma": ScintillationModel.gamma_gamma(2.0, 3.0)}


def comparison_table(models: dict | None = None, mn_values=(1, 2, 3, 4), Q: int = 2, Rc: float = 0.5,
                     p_target: float = TARGET_P, table: InfoTable | None = None) -> list[ComparisonRow]:
    """Single-block SNRs: CSIR at ``p_target``, the long-term threshold, and CSIT at ``p_target``."""
    models = models or default_models()
    table = table or get_table(Q)
    rows = []
    for name, model in models.items():
        for mn in mn_values:
            cfg = ChannelConfig(model, M=mn, N=1, B=1, Q=Q, Rc=Rc)
            dist = get_distribution(cfg)
            sr = snr_r(cfg, table)
            star = sr / dist.quantile(p_target) ** 2
            bar = lt_snr_threshold(cfg, table, dist)
            at = csit_snr_at(cfg, p_target, table, dist)
            rows.append(ComparisonRow(name, mn, _db(star), _db(bar), _db(at)))
    return rows


def _write(rows, header, meta, path=None) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def min_snr_csv(rows, mc: MonteCarloSpec, path=None) -> str:
    return _write([(r["Q"], r["Rc"], r["R_bits"], r["snr_db"]) for r in rows], ["Q", "Rc", "R_bits", "snr_db"],
                  {"samples": mc.samples, "seed": mc.seed}, path)


def comparison_csv(rows, Q: int, Rc: float, p_target: float = TARGET_P, path=None) -> str:
    body = [(r.model, r.MN, r.snr_star_db, r.snr_bar_db, r.csit_snr_at_target_db, r.csit_reported_db,
             int(r.bar_is_infinite)) for r in rows]
    header = ["model", "MN", "snr_star_db", "snr_bar_db", "csit_snr_at_target_db", "csit_reported_db",
              "bar_infinite"]
    return _write(body, header, {"Q": Q, "Rc": Rc, "B": 1, "p_target": p_target}, path)
