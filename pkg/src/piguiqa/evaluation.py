"""IQA statistics (5PL mapping, PLCC, SRCC, KRCC, RMSE) and the repeated-split protocol."""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import InvalidArgument, UndefinedCorrelation

log = logging.getLogger(__name__)


class FitDegenerate(UserWarning):
    """Predictions have no spread; the 5PL collapsed to a linear (constant) map."""


@dataclass
class FivePL:
    b1: float
    b2: float
    b3: float
    b4: float
    b5: float

    def __call__(self, x):
        return logistic5(np.asarray(x, dtype=np.float64), self.b1, self.b2, self.b3, self.b4, self.b5)

    def as_list(self):
        return [self.b1, self.b2, self.b3, self.b4, self.b5]


def logistic5(x, b1, b2, b3, b4, b5):
    # 1 / (1 + exp(z)) == expit(-z), overflow-free
    return b1 * (0.5 - special.expit(-b2 * (x - b3))) + b4 * x + b5


def _pair(x, y, min_len=2):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidArgument(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise InvalidArgument(f"need at least {min_len} points, got {x.size}")
    return x, y


def fit_5pl(pred, mos, max_iter=500, gtol=1e-8):
    """Least-squares 5PL fit (Levenberg-Marquardt), keeping the linear fit if it is better."""
    x, y = _pair(pred, mos, 5)
    if np.ptp(x) == 0:
        warnings.warn("zero-variance predictions; falling back to a constant map", FitDegenerate)
        return FivePL(0.0, 0.0, float(x[0]), 0.0, float(y.mean()))
    slope, intercept = np.polyfit(x, y, 1)
    linear = FivePL(0.0, float(1.0 / x.std()), float(x.mean()), float(slope), float(intercept))
    p0 = [np.ptp(y), 1.0 / x.std(), x.mean(), slope, intercept]
    try:
        res = optimize.least_squares(lambda b: logistic5(x, *b) - y, p0, method="lm",
                                     gtol=gtol, max_nfev=max_iter * (len(p0) + 1))
        fitted = FivePL(*map(float, res.x))
    except (ValueError, RuntimeError) as exc:
        log.debug("5PL fit failed (%s); using linear map", exc)
        return linear
    sse = lambda f: float(np.sum((f(x) - y) ** 2))
    if not np.all(np.isfinite(fitted(x))) or sse(linear) <= sse(fitted):
        return linear
    return fitted


def rankdata(x):
    """Average ranks (1-based), ties share the mean of their positions."""
    return stats.rankdata(x, method="average")


def pearson(x, y):
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(xc * xc)), np.sqrt(np.sum(yc * yc))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("zero variance in correlation argument")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def srcc(x, y):
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def krcc(x, y):
    """Kendall tau-b with tie correction, by exact pair counting."""
    x, y = _pair(x, y)
    n = x.size
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n - 1):
        sx = np.sign(x[i + 1:] - x[i])
        sy = np.sign(y[i + 1:] - y[i])
        prod = sx * sy
        concordant += int(np.count_nonzero(prod > 0))
        discordant += int(np.count_nonzero(prod < 0))
        ties_x += int(np.count_nonzero(sx == 0))
        ties_y += int(np.count_nonzero(sy == 0))
    n0 = n * (n - 1) // 2
    denom = (n0 - ties_x) * (n0 - ties_y)
    if denom == 0:
        raise UndefinedCorrelation("tau-b undefined: one argument is constant")
    return float((concordant - discordant) / np.sqrt(float(denom)))


def rmse(x, y):
    x, y = _pair(x, y, 1)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def plcc(pred, mos, fivepl=None):
    """Pearson between 5PL-mapped predictions and MOS."""
    f = fivepl or fit_5pl(pred, mos)
    return pearson(f(pred), mos)


def metrics(pred, mos):
    """All four criteria for one set of predictions; 5PL only feeds PLCC and RMSE."""
    pred, mos = _pair(pred, mos, 5)
    f = fit_5pl(pred, mos)
    mapped = f(pred)
    return {"plcc": pearson(mapped, mos), "srcc": srcc(pred, mos), "krcc": krcc(pred, mos),
            "rmse": rmse(mapped, mos), "fivepl": f.as_list()}


@dataclass
class EvalReport:
    plcc: float
    srcc: float
    krcc: float
    rmse: float
    fivepl: FivePL
    pairs: list
    repeats: int
    per_repeat: list
    config: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["fivepl"] = self.fivepl.as_list()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def per_repeat_csv(self):
        lines = ["repeat,seed,plcc,srcc,krcc,rmse"]
        for i, r in enumerate(self.per_repeat):
            lines.append(f"{i},{r['seed']},{r['plcc']:.6f},{r['srcc']:.6f},{r['krcc']:.6f},{r['rmse']:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(dataset, fit_and_predict, repeats=10, split=0.8, seeds=None, test_dataset=None,
             config=None, on_repeat=None):
    """Repeated train/test protocol.

    ``fit_and_predict(train, test, seed) -> predictions for test`` wraps
    training and scoring. With ``test_dataset`` the model is trained on all of
    ``dataset`` and tested on all of ``test_dataset`` (cross-dataset mode).
    Reported metrics are means over repeats; ``pairs`` and ``fivepl`` come
    from the last repeat.
    """
    from .training import split_dataset

    if repeats < 1:
        raise InvalidArgument("repeats must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(repeats))
    if len(seeds) < repeats:
        raise InvalidArgument(f"need {repeats} seeds, got {len(seeds)}")
    per_repeat, pairs, last_fit = [], [], None
    for r in range(repeats):
        seed = seeds[r]
        if test_dataset is None:
            train_set, test_set = split_dataset(dataset, split, seed)
        else:
            train_set, test_set = list(dataset), list(test_dataset)
        pred = np.asarray(fit_and_predict(train_set, test_set, seed), dtype=np.float64)
        mos = np.array([s.mos for s in test_set])
        m = metrics(pred, mos)
        last_fit = FivePL(*m.pop("fivepl"))
        m["seed"] = seed
        per_repeat.append(m)
        pairs = [[float(p), float(q)] for p, q in zip(pred, mos)]
        if on_repeat:
            on_repeat(r, m)
    mean = {k: float(np.mean([m[k] for m in per_repeat])) for k in ("plcc", "srcc", "krcc", "rmse")}
    return EvalReport(fivepl=last_fit, pairs=pairs, repeats=repeats, per_repeat=per_repeat,
                      config=dict(config or {}), **mean)
