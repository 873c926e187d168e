"""Preprocessing stack fitted on training rows and replayed on new rows.

Order: near-zero-variance filter, correlation filter, centering and scaling,
per-feature least-squares summary (ranking only), PCA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, ValidationError

STATE_FORMAT = "sessrank-pipeline-state"
STATE_VERSION = 1


def nzv_filter(X, freq_ratio_cutoff: float = 19.0, unique_pct_cutoff: float = 10.0) -> list[int]:
    """Indices of columns that are not near-zero-variance.

    A column is dropped when its most common value outnumbers the runner-up
    by more than ``freq_ratio_cutoff`` while fewer than ``unique_pct_cutoff``
    percent of its values are distinct, or when it is constant.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    kept = []
    for j in range(X.shape[1]):
        _, counts = np.unique(X[:, j], return_counts=True)
        if counts.size < 2:
            continue
        top2 = np.sort(counts)[::-1][:2]
        freq_ratio = top2[0] / top2[1]
        unique_pct = 100.0 * counts.size / n
        if freq_ratio > freq_ratio_cutoff and unique_pct < unique_pct_cutoff:
            continue
        kept.append(j)
    return kept


def corr_filter(X, cutoff: float = 0.9) -> list[int]:
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if p < 2:
        return list(range(p))
    r = np.abs(np.corrcoef(X, rowvar=False))
    remaining = list(range(p))
    while len(remaining) > 1:
        sub = r[np.ix_(remaining, remaining)]
        np.fill_diagonal(sub, 0.0)
        worst = sub.max()
        if not worst > cutoff:
            break
        # first pair (row-major) reaching the maximum
        a, b = (int(v) for v in np.argwhere(sub == worst)[0])
        mean_abs = sub.sum(axis=1) / (len(remaining) - 1)
        if mean_abs[a] > mean_abs[b]:
            drop = a
        elif mean_abs[b] > mean_abs[a]:
            drop = b
        else:
            drop = max(a, b)
        del remaining[drop]
    return remaining


def standardize_fit(X, names: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1)
    for j, s in enumerate(stds):
        if not s > 0:
            col = names[j] if names is not None else j
            raise ValidationError(f"column {col} has zero standard deviation")
    return means, stds


def standardize_apply(X, means, stds) -> np.ndarray:
    return (np.asarray(X, dtype=float) - means) / stds


@dataclass(frozen=True)
class FeatureSummary:
    name: str
    slope: float
    intercept: float
    r_squared: float


def ols_summary(Z, y_ord, names: Sequence[str] | None = None) -> list[FeatureSummary]:
    """Simple least-squares fit of the ordinal label on each column, best R^2 first."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y_ord, dtype=float)
    if Z.shape[0] < 3:
        raise ValidationError("ols_summary needs at least 3 rows")
    names = list(names) if names is not None else [str(j) for j in range(Z.shape[1])]
    yc = y - y.mean()
    ss_tot = float(yc @ yc)
    out = []
    for j in range(Z.shape[1]):
        z = Z[:, j]
        zc = z - z.mean()
        szz = float(zc @ zc)
        slope = float(zc @ yc) / szz if szz > 0 else 0.0
        intercept = float(y.mean() - slope * z.mean())
        if ss_tot == 0.0:
            r2 = 0.0
        else:
            resid = y - (slope * z + intercept)
            r2 = 1.0 - float(resid @ resid) / ss_tot
            r2 = min(max(r2, 0.0), 1.0)
        out.append(FeatureSummary(names[j], slope, intercept, r2))
    # stable sort keeps column order among equal R^2
    return sorted(out, key=lambda s: -s.r_squared)


def pca_fit(Z, variance_retained: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Top covariance eigenvectors (columns) and their eigenvalues."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise ValidationError("pca_fit needs at least 2 rows")
    if not 0.0 < variance_retained <= 1.0:
        raise ValidationError("variance_retained must lie in (0, 1]")
    cov = np.atleast_2d(np.cov(Z, rowvar=False, ddof=1))
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"covariance eigendecomposition failed ({exc}); condition number {np.linalg.cond(cov):.3g}"
        ) from None
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if not total > 0:
        raise NumericError("covariance has zero trace; nothing to project")
    cum = np.cumsum(evals) / total
    m = int(np.searchsorted(cum, variance_retained - 1e-12, side="left")) + 1
    m = min(m, len(evals))
    comps = evecs[:, :m].copy()
    for k in range(m):
        lead = int(np.argmax(np.abs(comps[:, k])))
        if comps[lead, k] < 0:
            comps[:, k] = -comps[:, k]
    return comps, evals[:m].copy()


def pca_transform(Z, components) -> np.ndarray:
    return np.asarray(Z, dtype=float) @ components


@dataclass
class PipelineConfig:
    freq_ratio_cutoff: float = 19.0
    unique_pct_cutoff: float = 10.0
    corr_cutoff: float = 0.9
    variance_retained: float = 0.95
    use_pca: bool = True


@dataclass
class PipelineState:
    input_names: list[str]
    kept_after_nzv: list[int]
    kept_after_corr: list[int]
    means: np.ndarray
    stds: np.ndarray
    ols: list[FeatureSummary]
    pca_components: np.ndarray
    pca_eigenvalues: np.ndarray
    variance_retained: float
    total_variance: float
    use_pca: bool = True
    config: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def kept_names(self) -> list[str]:
        return [self.input_names[j] for j in self.kept_after_corr]

    @property
    def output_dim(self) -> int:
        return self.pca_components.shape[1] if self.use_pca else len(self.kept_after_corr)

    def standardized(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.input_names):
            raise ValidationError(
                f"expected {len(self.input_names)} input columns, got shape {X.shape}"
            )
        return standardize_apply(X[:, self.kept_after_corr], self.means, self.stds)

    def transform(self, X) -> np.ndarray:
        Z = self.standardized(X)
        return pca_transform(Z, self.pca_components) if self.use_pca else Z

    # -- text serialization: one field per line, reals in 17 significant digits
    def dumps(self) -> str:
        c = self.config
        lines = [
            f"format {STATE_FORMAT} {STATE_VERSION}",
            "config " + " ".join(
                [_num(c.freq_ratio_cutoff), _num(c.unique_pct_cutoff), _num(c.corr_cutoff),
                 _num(c.variance_retained), str(int(c.use_pca))]
            ),
            "input_names " + " ".join(self.input_names),
            "kept_after_nzv " + " ".join(map(str, self.kept_after_nzv)),
            "kept_after_corr " + " ".join(map(str, self.kept_after_corr)),
            "means " + " ".join(map(_num, self.means)),
            "stds " + " ".join(map(_num, self.stds)),
            f"ols {len(self.ols)}",
            *(
                f"  {s.name} {_num(s.slope)} {_num(s.intercept)} {_num(s.r_squared)}"
                for s in self.ols
            ),
            "pca_shape {} {}".format(*self.pca_components.shape),
            "pca_components " + " ".join(map(_num, self.pca_components.ravel())),
            "pca_eigenvalues " + " ".join(map(_num, self.pca_eigenvalues)),
            f"variance_retained {_num(self.variance_retained)}",
            f"total_variance {_num(self.total_variance)}",
            f"use_pca {int(self.use_pca)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PipelineState":
        lines = text.splitlines()
        if not lines or lines[0].split()[:2] != ["format", STATE_FORMAT]:
            raise ValidationError("not a pipeline state file")
        version = int(lines[0].split()[2])
        if version != STATE_VERSION:
            raise ValidationError(f"pipeline state version {version} unsupported (want {STATE_VERSION})")
        fields: dict[str, list[str]] = {}
        ols = []
        it = iter(lines[1:])
        for line in it:
            name, *vals = line.split(" ")
            if name == "ols":
                for _ in range(int(vals[0])):
                    fname, slope, icpt, r2 = next(it).split()
                    ols.append(FeatureSummary(fname, float(slope), float(icpt), float(r2)))
            else:
                fields[name] = [v for v in vals if v]
        conf = fields["config"]
        rows, cols = (int(v) for v in fields["pca_shape"])
        return cls(
            input_names=fields["input_names"],
            kept_after_nzv=[int(v) for v in fields["kept_after_nzv"]],
            kept_after_corr=[int(v) for v in fields["kept_after_corr"]],
            means=np.array([float(v) for v in fields["means"]]),
            stds=np.array([float(v) for v in fields["stds"]]),
            ols=ols,
            pca_components=np.array([float(v) for v in fields["pca_components"]]).reshape(rows, cols),
            pca_eigenvalues=np.array([float(v) for v in fields["pca_eigenvalues"]]),
            variance_retained=float(fields["variance_retained"][0]),
            total_variance=float(fields["total_variance"][0]),
            use_pca=bool(int(fields["use_pca"][0])),
            config=PipelineConfig(
                float(conf[0]), float(conf[1]), float(conf[2]), float(conf[3]), bool(int(conf[4]))
            ),
        )


def _num(x) -> str:
    return format(float(x), ".17g")


def fit_pipeline(X, y, names: Sequence[str], config: PipelineConfig | None = None) -> PipelineState:
    """Fit every preprocessing step on training rows ``X`` with class indices ``y``."""
    config = config or PipelineConfig()
    X = np.asarray(X, dtype=float)
    names = list(names)
    if X.shape[0] < 3:
        raise ValidationError("preprocessing needs at least 3 training rows")
    nzv = nzv_filter(X, config.freq_ratio_cutoff, config.unique_pct_cutoff)
    if not nzv:
        raise ValidationError("no predictor survives the near-zero-variance filter")
    corr_local = corr_filter(X[:, nzv], config.corr_cutoff)
    kept = [nzv[j] for j in corr_local]
    kept_names = [names[j] for j in kept]
    means, stds = standardize_fit(X[:, kept], kept_names)
    Z = standardize_apply(X[:, kept], means, stds)
    summary = ols_summary(Z, np.asarray(y) + 1, kept_names)
    comps, evals = pca_fit(Z, config.variance_retained)
    total = float(np.trace(np.atleast_2d(np.cov(Z, rowvar=False, ddof=1))))
    return PipelineState(
        input_names=names,
        kept_after_nzv=nzv,
        kept_after_corr=kept,
        means=means,
        stds=stds,
        ols=summary,
        pca_components=comps,
        pca_eigenvalues=evals,
        variance_retained=float(evals.sum() / total),
        total_variance=total,
        use_pca=config.use_pca,
        config=config,
    )


def fit_transform(X, y, names, config: PipelineConfig | None = None) -> tuple[PipelineState, np.ndarray]:
    state = fit_pipeline(X, y, names, config)
    return state, state.transform(X)
