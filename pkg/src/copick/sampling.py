"""Random sampling used by the simulator.

Every sampler draws from one seeded stream so that replaying a seed
replays an entire episode bit-exactly.  Gaussian draws are truncated from
below at small physical floors to avoid nonsensical negative samples.

The pick-time model of the original industrial setting is not public; the
surrogate here is a linear function of item pairs, single items, product
weight and volume, with coefficients calibrated so the population of pick
times under the default product generators has mean ~11-12 s and a
standard deviation around 10 s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PICKER_SPEED_MU = 1.25
PICKER_SPEED_SIGMA = 0.15
AMR_SPEED_MU = 1.5
AMR_SPEED_SIGMA = 0.15
SPEED_FLOOR = 0.3

PICK_TIME_REL_SIGMA = 0.1
PICK_TIME_FLOOR = 0.5

DISRUPTION_RATE = 1.0 / 50.0  # one unexpected delay per 50 picks on average
DISRUPTION_MU = 60.0
DISRUPTION_SIGMA = 7.5
DISRUPTION_FLOOR = 5.0

OVERTAKE_MU = 15.0
OVERTAKE_SIGMA = 2.5
OVERTAKE_FLOOR = 1.0


class RandomStream:
    """Seeded random stream; identical seeds give identical sequences."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def truncated_normal(self, mu: float, sigma: float, floor: float) -> float:
        if sigma == 0.0:
            return max(mu, floor)
        while True:
            x = self.rng.normal(mu, sigma)
            if x >= floor:
                return float(x)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return int(self.rng.integers(lo, hi + 1))

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]


@dataclass(frozen=True)
class Product:
    id: int
    weight: float  # kg
    volume: float  # liters
    category: str


def sample_picker_speed(rs: RandomStream, mu: float = PICKER_SPEED_MU,
                        sigma: float = PICKER_SPEED_SIGMA) -> float:
    return rs.truncated_normal(mu, sigma, SPEED_FLOOR)


def sample_amr_speed(rs: RandomStream, mu: float = AMR_SPEED_MU,
                     sigma: float = AMR_SPEED_SIGMA) -> float:
    return rs.truncated_normal(mu, sigma, SPEED_FLOOR)


@dataclass(frozen=True)
class PickTimeCoefficients:
    base: float = 2.0
    per_pair: float = 2.5       # applied to ceil(n_items / 2)
    per_single: float = 1.5     # applied when an odd item remains
    per_kg: float = 0.35
    per_liter: float = 0.08


DEFAULT_PICK_TIME = PickTimeCoefficients()


def expected_pick_time(product: Product, n_items: int,
                       coeffs: PickTimeCoefficients = DEFAULT_PICK_TIME) -> float:
    if n_items < 1:
        raise ValueError("n_items must be at least 1")
    pairs = math.ceil(n_items / 2)
    single = n_items % 2
    return (coeffs.base + coeffs.per_pair * pairs + coeffs.per_single * single
            + coeffs.per_kg * product.weight + coeffs.per_liter * product.volume)


def sample_pick_time(rs: RandomStream, t_expected: float,
                     rel_sigma: float = PICK_TIME_REL_SIGMA) -> float:
    if t_expected <= 0:
        raise ValueError("t_expected must be positive")
    return rs.truncated_normal(t_expected, rel_sigma * t_expected, PICK_TIME_FLOOR)


def sample_disruption_schedule(rs: RandomStream, n_picks: int,
                               rate: float = DISRUPTION_RATE) -> dict[int, float]:
    """Pick indices that suffer an unexpected delay, with their durations.

    Each pick is disrupted independently with probability ``rate``, the
    per-pick form of a delay occurring once per 1/rate picks on average.
    """
    if n_picks < 0:
        raise ValueError("n_picks must be non-negative")
    schedule: dict[int, float] = {}
    for i in range(n_picks):
        if rs.rng.random() < rate:
            schedule[i] = sample_disruption_duration(rs)
    return schedule


def sample_disruption_duration(rs: RandomStream) -> float:
    return rs.truncated_normal(DISRUPTION_MU, DISRUPTION_SIGMA, DISRUPTION_FLOOR)


def sample_overtake_delay(rs: RandomStream) -> float:
    return rs.truncated_normal(OVERTAKE_MU, OVERTAKE_SIGMA, OVERTAKE_FLOOR)


# --- product catalog generation ------------------------------------------

@dataclass(frozen=True)
class CategorySpec:
    name: str
    frequency: float           # relative category frequency
    weight_log_mu: float       # lognormal parameters for item weight (kg)
    weight_log_sigma: float
    volume_log_mu: float       # lognormal parameters for item volume (L)
    volume_log_sigma: float
    run_length_mean: float     # mean of the geometric run-length distribution


# Rough supermarket-style assortment from ~0.2 kg snacks to ~15 kg drink packs.
DEFAULT_CATEGORIES = (
    CategorySpec("light", 0.40, -0.45, 0.55, 1.1, 0.5, 4.0),
    CategorySpec("medium", 0.35, 0.95, 0.45, 1.6, 0.45, 4.0),
    CategorySpec("heavy", 0.25, 1.95, 0.35, 2.1, 0.4, 3.0),
)


def _default_item_count_table() -> tuple[np.ndarray, np.ndarray]:
    # Mixture: mostly small order lines, with a geometric heavy tail that
    # produces the long right tail seen in real order data.
    n_max = 40
    values = np.arange(1, n_max + 1)
    probs = np.zeros(n_max)
    for n in values:
        small = (1 / 3) if n <= 3 else 0.0
        p_geom = 0.095
        tail = p_geom * (1 - p_geom) ** (n - 3) if n >= 3 else 0.0
        probs[n - 1] = 0.58 * small + 0.42 * tail
    probs /= probs.sum()
    return values, probs


@dataclass
class ProductModel:
    """Config-driven generators for products, placement and order lines."""

    categories: tuple[CategorySpec, ...] = DEFAULT_CATEGORIES
    item_count_values: np.ndarray = field(default_factory=lambda: _default_item_count_table()[0])
    item_count_probs: np.ndarray = field(default_factory=lambda: _default_item_count_table()[1])
    pick_time: PickTimeCoefficients = DEFAULT_PICK_TIME

    def category_frequencies(self) -> np.ndarray:
        f = np.array([c.frequency for c in self.categories])
        return f / f.sum()

    def sample_category(self, rs: RandomStream) -> CategorySpec:
        idx = rs.rng.choice(len(self.categories), p=self.category_frequencies())
        return self.categories[int(idx)]

    def sample_run_length(self, rs: RandomStream, cat: CategorySpec) -> int:
        # Geometric on {1, 2, ...} with the configured mean.
        p = 1.0 / cat.run_length_mean
        return int(rs.rng.geometric(p))

    def sample_product(self, rs: RandomStream, product_id: int,
                       cat: CategorySpec) -> Product:
        w = float(rs.rng.lognormal(cat.weight_log_mu, cat.weight_log_sigma))
        v = float(rs.rng.lognormal(cat.volume_log_mu, cat.volume_log_sigma))
        return Product(id=product_id, weight=w, volume=v, category=cat.name)

    def sample_item_count(self, rs: RandomStream) -> int:
        idx = rs.rng.choice(len(self.item_count_values), p=self.item_count_probs)
        return int(self.item_count_values[idx])

    @classmethod
    def from_json(cls, text: str) -> "ProductModel":
        doc = json.loads(text)
        cats = tuple(CategorySpec(**c) for c in doc["categories"])
        model = cls(categories=cats)
        if "item_count_values" in doc:
            model.item_count_values = np.array(doc["item_count_values"])
            model.item_count_probs = np.array(doc["item_count_probs"])
            model.item_count_probs = model.item_count_probs / model.item_count_probs.sum()
        if "pick_time" in doc:
            model.pick_time = PickTimeCoefficients(**doc["pick_time"])
        return model


DEFAULT_PRODUCT_MODEL = ProductModel()


def generate_product_placement(rs: RandomStream, layout,
                               model: ProductModel = DEFAULT_PRODUCT_MODEL) -> dict[int, Product]:
    """Assign one product to every pick node.

    Categories are sampled by relative frequency and placed in contiguous
    runs (in node id order, which follows aisles) whose lengths come from
    the per-category run-length distribution.
    """
    placement: dict[int, Product] = {}
    nodes = [v for v in range(layout.n_nodes) if layout.is_pick[v]]
    i = 0
    pid = 0
    while i < len(nodes):
        cat = model.sample_category(rs)
        run = model.sample_run_length(rs, cat)
        for _ in range(min(run, len(nodes) - i)):
            placement[nodes[i]] = model.sample_product(rs, pid, cat)
            pid += 1
            i += 1
    return placement
