from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from webpilot.gateway import (
    DEFAULT_RATES,
    ModelRates,
    PricingTable,
    UnknownModelError,
    UsageLedger,
    UsageRecord,
    estimate_tokens,
    ledger_report,
    price,
)
from webpilot.gateway.pricing import image_tokens

# Rates as printed in the pricing table: ($/M in, $/M out, tokens per 1200x1200 image).
PRINTED = {
    "gpt-4o": ("2.5", "10", 772),
    "gpt-4o-mini": ("0.15", "0.6", 25508),
    "gpt-4.1": ("2", "8", 772),
    "gpt-4.1-mini": ("0.4", "1.6", 2348),
    "gemini-2.0-flash": ("0.1", "0.4", 1290),
    "holo1-3b": ("0.1", "0.4", 1280),
    "holo1-7b": ("0.15", "0.6", 1280),
    "qwen2.5-vl-7b-instruct": ("0.15", "0.6", 1280),
    "qwen2.5-vl-32b-instruct": ("0.5", "2", 1280),
}


def oracle_price(model: str, tin: int, tout: int) -> Fraction:
    rin, rout, _ = PRINTED[model]
    return (tin * Fraction(rin) + tout * Fraction(rout)) / 1_000_000


def record(tag: str, cost: float, model: str = "gpt-4o", tin: int = 0, tout: int = 0) -> UsageRecord:
    return UsageRecord(model, tin, tout, 0, tag, cost)


def test_default_table_matches_printed_rates():
    assert set(DEFAULT_RATES) == set(PRINTED)
    for model, (rin, rout, img) in PRINTED.items():
        r = DEFAULT_RATES[model]
        assert (r.rate_in, r.rate_out, r.image_tokens_1200) == (float(rin), float(rout), img)


def test_model_ids_normalized():
    table = PricingTable.default()
    assert table.rates("Hcompany/Holo1-7B") == table.rates("holo1-7b")
    assert "GPT-4o" in table
    with pytest.raises(UnknownModelError, match="mystery"):
        table.rates("mystery-model")


def test_overrides_do_not_mutate_default():
    table = PricingTable.default().with_overrides({"mine": ModelRates(1, 2, 3)})
    assert "mine" in table and "mine" not in PricingTable.default()


def test_rates_must_be_positive():
    with pytest.raises(ValueError):
        ModelRates(0, 1, 1)


class TestEstimate:
    def test_full_image_gpt4o(self):
        assert estimate_tokens("", [(1200, 1200)], "gpt-4o") == 772

    def test_quarter_area_holo(self):
        assert estimate_tokens("", [(600, 600)], "holo1-7b") == 320

    def test_text_only(self):
        assert estimate_tokens("abcdefgh", [], "gpt-4o") == 2
        assert estimate_tokens("abcdefghi", [], "gpt-4o") == 3

    @given(st.integers(1, 4000), st.integers(1, 4000), st.sampled_from(sorted(PRINTED)))
    def test_image_tokens_area_scaled(self, w, h, model):
        exact = Fraction(PRINTED[model][2] * w * h, 1440000)
        got = image_tokens(w, h, model, PricingTable.default())
        assert abs(got - exact) <= Fraction(1, 2)


class TestPrice:
    def test_worked_example_exact(self):
        assert price(872, 50, "gpt-4o") == 0.00268

    def test_holo_example(self):
        assert price(1000, 100, "holo1-7b") == pytest.approx(0.00021, rel=1e-12)

    def test_zero(self):
        for model in PRINTED:
            assert price(0, 0, model) == 0

    @given(st.integers(0, 10**7), st.integers(0, 10**6), st.sampled_from(sorted(PRINTED)))
    def test_matches_rational_oracle(self, tin, tout, model):
        expected = oracle_price(model, tin, tout)
        got = price(tin, tout, model)
        assert expected == 0 and got == 0 or abs(Fraction(got) - expected) / expected <= Fraction(1, 10**12)


class TestLedger:
    def test_empty(self):
        rep = ledger_report(UsageLedger())
        assert rep.agent_total == rep.judge_total == rep.grand_total == 0

    def test_agent_sum(self):
        rep = ledger_report([record("policy", 0.01), record("localizer", 0.02)])
        assert rep.agent_total == pytest.approx(0.03, rel=1e-12)

    def test_judge_excluded(self):
        rep = ledger_report([record("policy", 0.03), record("judge", 0.01)])
        assert rep.agent_total == pytest.approx(0.03)
        assert rep.judge_total == pytest.approx(0.01)
        assert rep.grand_total == pytest.approx(0.04)

    def test_breakdowns(self):
        rep = ledger_report(
            [record("policy", 0.5, "holo1-7b"), record("validator", 0.25, "gpt-4o"), record("policy", 0.25, "holo1-7b")]
        )
        assert rep.by_module["policy"] == 0.75
        assert rep.by_model == {"gpt-4o": 0.25, "holo1-7b": 0.75}
        assert rep.by_module_model[("policy", "holo1-7b")] == 0.75
        assert rep.calls == 3
        assert "policy/holo1-7b" in rep.to_dict()["by_module_model"]

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError):
            record("planner", 0.1)

    def test_order_independent(self):
        rng = random.Random(7)
        recs = [record("policy", rng.random() * 1e-3) for _ in range(500)]
        a = ledger_report(recs).agent_total
        rng.shuffle(recs)
        assert ledger_report(recs).agent_total == a

    def test_randomized_against_oracle(self):
        rng = random.Random(2024)
        models = sorted(PRINTED)
        for _ in range(50):
            ledger = UsageLedger()
            exact = {"agent": Fraction(0), "judge": Fraction(0)}
            for _ in range(rng.randint(1, 40)):
                model = rng.choice(models)
                tag = rng.choice(["policy", "localizer", "validator", "judge"])
                tin, tout = rng.randint(0, 200_000), rng.randint(0, 5_000)
                ledger.append(UsageRecord(model, tin, tout, 0, tag, price(tin, tout, model)))
                exact["judge" if tag == "judge" else "agent"] += oracle_price(model, tin, tout)
            rep = ledger_report(ledger)
            for got, want in ((rep.agent_total, exact["agent"]), (rep.judge_total, exact["judge"])):
                assert want == 0 and got == 0 or abs(Fraction(got) - want) / want <= Fraction(1, 10**12)
            assert math.isclose(rep.grand_total, float(exact["agent"] + exact["judge"]), rel_tol=1e-12)
