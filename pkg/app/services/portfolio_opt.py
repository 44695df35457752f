"""
Diversification search.

NSGA-II over scenario-estimated objectives (maximize expected return,
minimize variance), the long-only Markowitz QP baseline, the risk grid of
target returns and the random default baseline.
"""

import itertools
import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ConfigError, ContractError, DataError
from app.db.models import (
    Diversification,
    MarkowitzModel,
    NsgaParams,
    ParetoPoint,
    ParetoSet,
    PriceTable,
    RiskGrid,
)

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, float]]

TIE_TOL = 1e-12
KKT_TOL = 1e-10
QP_MAX_ITER = 200
QP_STEP_TOL = 1e-10
ENUMERATION_LIMIT = 12


# ---------------------------------------------------------------------------
# Non-dominated sorting
# ---------------------------------------------------------------------------


def domination_matrix(values: np.ndarray) -> np.ndarray:
    """D[i, j] is True when point i dominates point j (max f1, min f2)."""
    f1 = values[:, 0]
    f2 = values[:, 1]
    no_worse = (f1[:, None] >= f1[None, :]) & (f2[:, None] <= f2[None, :])
    better = (f1[:, None] > f1[None, :]) | (f2[:, None] < f2[None, :])
    return no_worse & better


def fast_non_dominated_sort(points: Union[np.ndarray, Sequence[Tuple[float, float]]]) -> List[List[int]]:
    """
    Partition point indices into fronts F1, F2, ...

    Returns:
        list of fronts, each a sorted list of indices into ``points``
    """
    values = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if values.shape[0] == 0:
        return []
    dominates = domination_matrix(values)
    counts = dominates.sum(axis=0)
    remaining = np.ones(values.shape[0], dtype=bool)
    fronts = []
    while remaining.any():
        front = np.flatnonzero(remaining & (counts == 0))
        fronts.append(front.tolist())
        remaining[front] = False
        counts = counts - dominates[front].sum(axis=0)
    return fronts


def crowding_distance(values: np.ndarray) -> np.ndarray:
    """Crowding distance of every point of one front; boundary points get inf."""
    values = np.asarray(values, dtype=np.float64).reshape(-1, 2)
    m = values.shape[0]
    distance = np.zeros(m)
    if m <= 2:
        distance[:] = np.inf
        return distance
    for k in range(values.shape[1]):
        order = np.argsort(values[:, k], kind="stable")
        column = values[order, k]
        distance[order[0]] = distance[order[-1]] = np.inf
        span = column[-1] - column[0]
        if span <= 0:
            continue
        distance[order[1:-1]] += (column[2:] - column[:-2]) / span
    return distance


def rank_and_crowding(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rank = np.zeros(values.shape[0], dtype=int)
    crowd = np.zeros(values.shape[0])
    for r, front in enumerate(fast_non_dominated_sort(values)):
        rank[front] = r
        crowd[front] = crowding_distance(values[front])
    return rank, crowd


def hypervolume(points: np.ndarray, reference: Tuple[float, float]) -> float:
    """
    Area dominated by the points and bounded by the reference point
    (f1 maximized down to reference[0], f2 minimized up to reference[1]).
    """
    values = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r1, r2 = reference
    values = values[(values[:, 0] > r1) & (values[:, 1] < r2)]
    if values.shape[0] == 0:
        return 0.0
    order = np.argsort(-values[:, 0], kind="stable")
    f1 = values[order, 0]
    best_f2 = np.minimum.accumulate(values[order, 1])
    lower = np.append(f1[1:], r1)
    return float(np.sum((f1 - lower) * (r2 - best_f2)))


# ---------------------------------------------------------------------------
# NSGA-II
# ---------------------------------------------------------------------------


def repair(population: np.ndarray) -> np.ndarray:
    """Clip negatives and renormalize each row onto the simplex (all-zero rows become uniform)."""
    population = np.clip(population, 0.0, None)
    sums = population.sum(axis=1, keepdims=True)
    uniform = np.full_like(population, 1.0 / population.shape[1])
    safe = np.where(sums > 0, sums, 1.0)
    return np.where(sums > 0, population / safe, uniform)


def _sbx(parents1: np.ndarray, parents2: np.ndarray, eta: float, prob: float, rng) -> Tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover on [0, 1] bounds."""
    c1 = parents1.copy()
    c2 = parents2.copy()
    do_pair = rng.random(parents1.shape[0]) < prob
    do_gene = (rng.random(parents1.shape) < 0.5) & do_pair[:, None]
    do_gene &= np.abs(parents1 - parents2) > 1e-14
    u = rng.random(parents1.shape)
    swap = rng.random(parents1.shape) < 0.5

    y1 = np.minimum(parents1, parents2)
    y2 = np.maximum(parents1, parents2)
    gap = np.where(do_gene, y2 - y1, 1.0)
    exponent = 1.0 / (eta + 1.0)

    def spread(beta):
        alpha = 2.0 - beta ** -(eta + 1.0)
        low = u <= 1.0 / alpha
        return np.where(
            low,
            (u * alpha) ** exponent,
            (1.0 / np.maximum(2.0 - u * alpha, 1e-300)) ** exponent,
        )

    betaq1 = spread(1.0 + 2.0 * y1 / gap)
    betaq2 = spread(1.0 + 2.0 * (1.0 - y2) / gap)
    child1 = np.clip(0.5 * ((y1 + y2) - betaq1 * gap), 0.0, 1.0)
    child2 = np.clip(0.5 * ((y1 + y2) + betaq2 * gap), 0.0, 1.0)
    first = np.where(swap, child2, child1)
    second = np.where(swap, child1, child2)
    c1 = np.where(do_gene, first, c1)
    c2 = np.where(do_gene, second, c2)
    return c1, c2


def _polynomial_mutation(population: np.ndarray, eta: float, prob: float, rng) -> np.ndarray:
    """Bounded polynomial mutation on [0, 1]."""
    mutate = rng.random(population.shape) < prob
    u = rng.random(population.shape)
    y = population
    exponent = 1.0 / (eta + 1.0)
    low = u < 0.5
    xy_low = 1.0 - y
    xy_high = y
    val_low = 2.0 * u + (1.0 - 2.0 * u) * xy_low ** (eta + 1.0)
    val_high = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy_high ** (eta + 1.0)
    deltaq = np.where(low, val_low**exponent - 1.0, 1.0 - val_high**exponent)
    mutated = np.clip(y + deltaq, 0.0, 1.0)
    return np.where(mutate, mutated, population)


def _tournament(rank: np.ndarray, crowd: np.ndarray, count: int, rng) -> np.ndarray:
    a = rng.integers(0, rank.size, size=count)
    b = rng.integers(0, rank.size, size=count)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def _environmental_selection(values: np.ndarray, size: int) -> np.ndarray:
    chosen: List[int] = []
    for front in fast_non_dominated_sort(values):
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
            if len(chosen) == size:
                break
            continue
        crowd = crowding_distance(values[front])
        order = np.argsort(-crowd, kind="stable")
        chosen.extend(np.asarray(front)[order[: size - len(chosen)]].tolist())
        break
    return np.asarray(chosen, dtype=int)


def _evaluate(objective, population: np.ndarray) -> np.ndarray:
    evaluate_many = getattr(objective, "evaluate_many", None)
    if evaluate_many is not None:
        return np.asarray(evaluate_many(population), dtype=np.float64)
    return np.array([objective(x) for x in population], dtype=np.float64)


def initial_population(assets: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Simplex vertices first, the rest uniform on the simplex."""
    vertices = np.eye(assets)[: min(assets, size)]
    draws = rng.dirichlet(np.ones(assets), size=size - vertices.shape[0])
    return repair(np.vstack([vertices, draws]))


def nsga2_optimize(objective: Objective, assets: int, params: Optional[NsgaParams] = None, seed: int = 0) -> ParetoSet:
    """
    Evolve diversifications and return the final first front, deduplicated
    by objective values and ordered by expected return.
    """
    if assets < 2:
        raise ConfigError(f"NSGA-II needs at least 2 assets, got {assets}")
    params = params or NsgaParams()
    params.check()
    rng = np.random.default_rng(seed)
    size = params.population
    mutation_prob = params.mutation_prob if params.mutation_prob is not None else 1.0 / assets

    population = initial_population(assets, size, rng)
    values = _evaluate(objective, population)
    for _ in range(params.generations):
        rank, crowd = rank_and_crowding(values)
        half = (size + 1) // 2
        parents1 = population[_tournament(rank, crowd, half, rng)]
        parents2 = population[_tournament(rank, crowd, half, rng)]
        child1, child2 = _sbx(parents1, parents2, params.sbx_eta, params.crossover_prob, rng)
        offspring = np.vstack([child1, child2])[:size]
        offspring = repair(_polynomial_mutation(offspring, params.mutation_eta, mutation_prob, rng))

        combined = np.vstack([population, offspring])
        combined_values = np.vstack([values, _evaluate(objective, offspring)])
        keep = _environmental_selection(combined_values, size)
        population = combined[keep]
        values = combined_values[keep]

    front = fast_non_dominated_sort(values)[0]
    seen = set()
    points = []
    for i in sorted(front, key=lambda j: (values[j, 0], values[j, 1], j)):
        key = (values[i, 0], values[i, 1])
        if key in seen:
            continue
        seen.add(key)
        points.append(ParetoPoint(Diversification(population[i]), float(values[i, 0]), float(values[i, 1])))
    return ParetoSet(tuple(points))


# ---------------------------------------------------------------------------
# Markowitz baseline
# ---------------------------------------------------------------------------


def horizon_returns(prices: np.ndarray, horizon: int) -> np.ndarray:
    """Returns e / s over consecutive non-overlapping horizon-day blocks (blocks x A)."""
    prices = np.asarray(prices, dtype=np.float64)
    starts = np.arange(0, prices.shape[1] - horizon, horizon)
    return (prices[:, starts + horizon] / prices[:, starts]).T


def markowitz_estimate(prices: Union[PriceTable, np.ndarray], horizon: int) -> MarkowitzModel:
    """Mean and unbiased covariance of horizon-length returns."""
    if isinstance(prices, PriceTable):
        prices = prices.prices
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    returns = horizon_returns(prices, horizon)
    if returns.shape[0] < 2:
        raise DataError(
            f"Training history of {np.shape(prices)[1]} days gives {returns.shape[0]} "
            f"blocks of {horizon} days; need at least 2"
        )
    mean = returns.mean(axis=0)
    cov = np.atleast_2d(np.cov(returns, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    r_max = float(returns.max())
    logger.info(
        f"Markowitz model from {returns.shape[0]} blocks of {horizon} days; r_max={r_max:.4f}"
    )
    return MarkowitzModel(mean=mean, cov=cov, r_max=r_max, horizon=horizon, n_blocks=returns.shape[0])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - cssv / ind > 0
    rho = ind[cond][-1]
    theta = cssv[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def project_return_simplex(y: np.ndarray, mu: np.ndarray, target: float, iterations: int = 60) -> np.ndarray:
    """Projection onto {x on the simplex, mu . x >= target}: x = P(y + tau * mu), tau >= 0."""
    x = project_simplex(y)
    if mu @ x >= target:
        return x
    high = 1.0
    for _ in range(60):
        if mu @ project_simplex(y + high * mu) >= target:
            break
        high *= 2.0
    low = 0.0
    for _ in range(iterations):
        mid = 0.5 * (low + high)
        if mu @ project_simplex(y + mid * mu) >= target:
            high = mid
        else:
            low = mid
    return project_simplex(y + high * mu)


def _projected_gradient(cov: np.ndarray, mu: np.ndarray, target: float) -> np.ndarray:
    """Accelerated projected gradient from the uniform portfolio."""
    assets = mu.size
    lipschitz = 2.0 * float(np.linalg.eigvalsh(cov).max())
    x = project_return_simplex(np.full(assets, 1.0 / assets), mu, target)
    if lipschitz <= 0:
        return x
    step = 1.0 / lipschitz
    z = x
    t = 1.0
    for _ in range(QP_MAX_ITER):
        x_next = project_return_simplex(z - step * 2.0 * (cov @ z), mu, target)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_next + ((t - 1.0) / t_next) * (x_next - x)
        converged = np.linalg.norm(x_next - x) < QP_STEP_TOL
        x, t = x_next, t_next
        if converged:
            break
    return x


def _multipliers(cov: np.ndarray, mu: np.ndarray, x: np.ndarray, target: float) -> Tuple[float, float]:
    """Budget multiplier lambda and return multiplier nu >= 0 that best explain x."""
    gradient = 2.0 * cov @ x
    support = x > 1e-12
    g = gradient[support]
    m = mu[support]
    active = mu @ x - target <= 1e-9 * max(1.0, abs(target))
    if not active:
        return float(g.mean()), 0.0
    if np.ptp(m) > 1e-12:
        design = np.column_stack([np.ones_like(m), m])
        (lam, nu), *_ = np.linalg.lstsq(design, g, rcond=None)
        if nu >= 0:
            return float(lam), float(nu)
        return float(g.mean()), 0.0

    # Support returns all equal: lambda + nu * mu_s = c, nu chosen in its feasible interval
    c = float(g.mean())
    mu_s = float(m.mean())
    lower, upper = 0.0, np.inf
    for j in np.flatnonzero(~support):
        diff = mu[j] - mu_s
        slack = gradient[j] - c
        if diff > 1e-15:
            upper = min(upper, slack / diff)
        elif diff < -1e-15:
            lower = max(lower, slack / diff)
    nu = lower if lower <= upper else 0.0
    return c - nu * mu_s, float(nu)


def kkt_residual(model: MarkowitzModel, x: np.ndarray, target: float) -> float:
    """Largest KKT violation of x for min x'Sx s.t. mu.x >= target, sum x = 1, x >= 0."""
    x = np.asarray(x, dtype=np.float64)
    cov, mu = model.cov, model.mean
    lam, nu = _multipliers(cov, mu, x, target)
    reduced = 2.0 * cov @ x - lam - nu * mu
    support = x > 1e-12
    residuals = [
        abs(x.sum() - 1.0),
        max(0.0, target - mu @ x),
        max(0.0, -x.min()),
        float(np.abs(reduced[support]).max()) if support.any() else 0.0,
        float(max(0.0, -reduced[~support].min())) if (~support).any() else 0.0,
        abs(nu * (mu @ x - target)),
    ]
    return float(max(residuals))


def _solve_support(cov: np.ndarray, mu: np.ndarray, target: float, support: Sequence[int], return_active: bool) -> Optional[np.ndarray]:
    """Equality-constrained QP on a support set via its KKT linear system."""
    idx = np.asarray(support, dtype=int)
    k = idx.size
    rows = k + 1 + int(return_active)
    system = np.zeros((rows, rows))
    rhs = np.zeros(rows)
    system[:k, :k] = 2.0 * cov[np.ix_(idx, idx)]
    system[:k, k] = -1.0
    system[k, :k] = 1.0
    rhs[k] = 1.0
    if return_active:
        system[:k, k + 1] = -mu[idx]
        system[k + 1, :k] = mu[idx]
        rhs[k + 1] = target
    solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    if np.abs(system @ solution - rhs).max() > KKT_TOL:
        return None
    weights = solution[:k]
    if weights.min() < -1e-12:
        return None
    x = np.zeros(mu.size)
    x[idx] = np.clip(weights, 0.0, None)
    total = x.sum()
    if total <= 0:
        return None
    return x / total


def _candidate_supports(x0: np.ndarray) -> List[Tuple[int, ...]]:
    assets = x0.size
    first = tuple(np.flatnonzero(x0 > 1e-8).tolist()) or (int(np.argmax(x0)),)
    supports = [first]
    if assets <= ENUMERATION_LIMIT:
        for size in range(assets, 0, -1):
            supports.extend(s for s in itertools.combinations(range(assets), size) if s != first)
    return supports


def markowitz_weights(model: MarkowitzModel, target: float) -> np.ndarray:
    """
    Minimum-variance long-only weights with expected return >= target.

    Targets above the best asset mean are clamped to it. A projected
    gradient pass identifies the active set; an exact KKT solve on that set
    (or, failing that, on enumerated sets) polishes the result.
    """
    cov, mu = model.cov, model.mean
    best = float(mu.max())
    if target > best:
        target = best
    x0 = _projected_gradient(cov, mu, target)
    fallback = x0
    fallback_residual = kkt_residual(model, x0, target)
    for support in _candidate_supports(x0):
        for active in (False, True):
            x = _solve_support(cov, mu, target, support, active)
            if x is None:
                continue
            residual = kkt_residual(model, x, target)
            if residual <= KKT_TOL:
                return x
            if residual < fallback_residual:
                fallback, fallback_residual = x, residual
    logger.warning(f"Markowitz QP for target {target:.6f} ended with KKT residual {fallback_residual:.3g}")
    return repair(fallback[None])[0]


def markowitz_frontier(model: MarkowitzModel, grid: RiskGrid) -> List[Diversification]:
    """One minimum-variance diversification per risk level."""
    best = float(model.mean.max())
    clamped = int(np.sum(grid.targets > best))
    if clamped:
        logger.info(f"{clamped} target returns above the best mean {best:.4f} are clamped")
    return [Diversification(markowitz_weights(model, float(t))) for t in grid.targets]


# ---------------------------------------------------------------------------
# Risk levels
# ---------------------------------------------------------------------------


def risk_grid(r_max: float, z_levels: int = 25) -> RiskGrid:
    """Targets uniformly spaced from break-even (1) to 2 * r_max - 1."""
    if z_levels < 2:
        raise ConfigError(f"risk grid needs at least 2 levels, got {z_levels}")
    if r_max < 1:
        raise ContractError(f"r_max must be >= 1, got {r_max}")
    top = 2.0 * r_max - 1.0
    levels = np.arange(z_levels)
    targets = 1.0 + levels * (top - 1.0) / (z_levels - 1)
    targets[0] = 1.0
    targets[-1] = top
    return RiskGrid(targets=targets, r_max=float(r_max))


def safe_risk_grid(r_max: float, z_levels: int = 25) -> RiskGrid:
    """risk_grid with r_max below break-even clamped to 1."""
    if r_max < 1:
        logger.warning(f"r_max={r_max:.4f} is below break-even; clamping the risk grid to 1")
        r_max = 1.0
    return risk_grid(r_max, z_levels)


def select_indices(pareto: ParetoSet, targets: np.ndarray) -> np.ndarray:
    """Index of the nearest expected return per target; ties go to the lower variance."""
    if len(pareto) == 0:
        raise ContractError("Pareto set is empty")
    returns = np.array([p.expected_return for p in pareto.points])
    variances = np.array([p.variance for p in pareto.points])
    chosen = []
    for target in np.asarray(targets, dtype=np.float64):
        distance = np.abs(target - returns)
        tied = np.flatnonzero(distance <= distance.min() + TIE_TOL)
        chosen.append(int(tied[np.argmin(variances[tied])]))
    return np.asarray(chosen, dtype=int)


def select_by_risk(pareto: ParetoSet, grid: RiskGrid) -> List[Diversification]:
    return [pareto.points[i].diversification for i in select_indices(pareto, grid.targets)]


def default_random(z_levels: int, model: MarkowitzModel, seed: int) -> List[Diversification]:
    """Uniform simplex draws ordered by expected return; position = risk level."""
    if z_levels < 1:
        raise ConfigError(f"need at least one risk level, got {z_levels}")
    rng = np.random.default_rng(seed)
    draws = rng.dirichlet(np.ones(model.mean.size), size=z_levels)
    draws = draws / draws.sum(axis=1, keepdims=True)
    order = np.argsort(draws @ model.mean, kind="stable")
    return [Diversification(draws[i]) for i in order]


def frontier_rows(frontier: Sequence[Diversification], objective: Objective) -> Tuple[List[float], List[float]]:
    """Estimated (returns, variances) of each frontier diversification under ``objective``."""
    values = [objective(d.weights) for d in frontier]
    return [v[0] for v in values], [v[1] for v in values]


def model_objective(model: MarkowitzModel) -> Objective:
    def objective(weights: np.ndarray) -> Tuple[float, float]:
        return float(model.mean @ weights), float(weights @ model.cov @ weights)

    return objective
