import numpy as np
import pytest

from copick.layout import build_layout
from copick.sampling import (
    DEFAULT_PRODUCT_MODEL,
    PickTimeCoefficients,
    Product,
    ProductModel,
    RandomStream,
    expected_pick_time,
    generate_product_placement,
    sample_amr_speed,
    sample_disruption_duration,
    sample_disruption_schedule,
    sample_overtake_delay,
    sample_pick_time,
    sample_picker_speed,
)

N = 100_000


def moments(draw, n=N):
    xs = np.array([draw() for _ in range(n)])
    return xs.mean(), xs.std()


def test_picker_speed_moments():
    rs = RandomStream(1)
    mean, sd = moments(lambda: sample_picker_speed(rs))
    assert mean == pytest.approx(1.25, abs=0.01)
    assert sd == pytest.approx(0.15, abs=0.01)


def test_amr_speed_moments():
    rs = RandomStream(2)
    mean, sd = moments(lambda: sample_amr_speed(rs))
    assert mean == pytest.approx(1.5, abs=0.01)
    assert sd == pytest.approx(0.15, abs=0.01)


def test_pick_time_noise_proportional():
    rs = RandomStream(3)
    for t in (5.0, 12.0, 40.0):
        mean, sd = moments(lambda: sample_pick_time(rs, t), n=40_000)
        assert mean == pytest.approx(t, rel=0.01)
        assert sd == pytest.approx(0.1 * t, rel=0.05)


def test_disruption_moments_and_rate():
    rs = RandomStream(4)
    mean, sd = moments(lambda: sample_disruption_duration(rs))
    assert mean == pytest.approx(60.0, abs=0.5)
    assert sd == pytest.approx(7.5, abs=0.2)
    schedule = sample_disruption_schedule(RandomStream(5), N)
    assert len(schedule) / N == pytest.approx(1 / 50, abs=0.002)
    assert all(d >= 5.0 for d in schedule.values())


def test_overtake_delay_moments():
    rs = RandomStream(6)
    mean, sd = moments(lambda: sample_overtake_delay(rs))
    assert mean == pytest.approx(15.0, abs=0.1)
    assert sd == pytest.approx(2.5, abs=0.1)


def test_truncation_floors():
    rs = RandomStream(7)
    assert all(sample_picker_speed(rs, 0.35, 0.5) >= 0.3 for _ in range(2000))
    assert all(sample_pick_time(rs, 0.6) >= 0.5 for _ in range(2000))
    # zero variance degenerates to the mean (or the floor if above it)
    assert rs.truncated_normal(2.0, 0.0, 0.5) == 2.0
    assert rs.truncated_normal(0.1, 0.0, 0.5) == 0.5


def test_same_seed_same_stream():
    a = [RandomStream(9).truncated_normal(1.0, 0.2, 0.0) for _ in range(1)]
    xs = RandomStream(9)
    ys = RandomStream(9)
    assert [xs.truncated_normal(1, 0.2, 0) for _ in range(50)] == \
        [ys.truncated_normal(1, 0.2, 0) for _ in range(50)]
    assert xs.uniform_int(0, 10) == ys.uniform_int(0, 10)


def test_expected_pick_time_formula():
    coeffs = PickTimeCoefficients(base=2.0, per_pair=2.5, per_single=1.5,
                                  per_kg=0.35, per_liter=0.08)
    p = Product(0, weight=2.0, volume=1.0, category="medium")
    # 1 item: 2.0 + 2.5 + 1.5 + 0.7 + 0.08
    assert expected_pick_time(p, 1, coeffs) == pytest.approx(6.78)
    # even counts have no single-item term
    assert expected_pick_time(p, 4, coeffs) == pytest.approx(2.0 + 5.0 + 0.78)
    assert expected_pick_time(p, 5, coeffs) > expected_pick_time(p, 4, coeffs)
    with pytest.raises(ValueError):
        expected_pick_time(p, 0, coeffs)


def test_pick_time_population_moments():
    """Sampled pick times across the full product mix land near 11.3 s."""
    model = DEFAULT_PRODUCT_MODEL
    means, sds = [], []
    for seed in range(3):
        rs = RandomStream(100 + seed)
        times = []
        for _ in range(20_000):
            cat = model.sample_category(rs)
            prod = model.sample_product(rs, 0, cat)
            n = model.sample_item_count(rs)
            times.append(sample_pick_time(rs, expected_pick_time(prod, n)))
        times = np.array(times)
        means.append(times.mean())
        sds.append(times.std())
    assert all(10.3 <= m <= 13.3 for m in means)
    assert all(8.0 <= s <= 13.0 for s in sds)


def test_placement_covers_all_pick_nodes_in_runs():
    lay = build_layout(4, 6)
    rs = RandomStream(11)
    placement = generate_product_placement(rs, lay)
    pick_nodes = [v for v in range(lay.n_nodes) if lay.is_pick[v]]
    assert sorted(placement) == pick_nodes
    # product ids unique, categories come in contiguous runs
    ids = [placement[v].id for v in pick_nodes]
    assert len(set(ids)) == len(ids)
    cats = [placement[v].category for v in pick_nodes]
    runs = 1 + sum(1 for a, b in zip(cats, cats[1:]) if a != b)
    assert runs < len(cats) / 2  # far fewer category switches than nodes


def test_category_frequencies_normalized():
    model = ProductModel()
    f = model.category_frequencies()
    assert f.sum() == pytest.approx(1.0)
    counts = {c.name: 0 for c in model.categories}
    rs = RandomStream(12)
    for _ in range(30_000):
        counts[model.sample_category(rs).name] += 1
    for spec, freq in zip(model.categories, f):
        assert counts[spec.name] / 30_000 == pytest.approx(freq, abs=0.01)


def test_product_model_json_round_trip():
    doc = """{
      "categories": [
        {"name": "only", "frequency": 1.0, "weight_log_mu": 0.0,
         "weight_log_sigma": 0.1, "volume_log_mu": 0.0,
         "volume_log_sigma": 0.1, "run_length_mean": 2.0}
      ],
      "pick_time": {"base": 1.0, "per_pair": 1.0, "per_single": 0.5,
                    "per_kg": 0.1, "per_liter": 0.0}
    }"""
    model = ProductModel.from_json(doc)
    assert model.categories[0].name == "only"
    assert model.pick_time.base == 1.0
    p = Product(0, 2.0, 1.0, "only")
    assert expected_pick_time(p, 2, model.pick_time) == pytest.approx(2.2)
