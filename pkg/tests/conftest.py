import numpy as np
import pytest

from hedonix.market import TransactionPanel


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def two_product_panel():
    """Hand-built two-period panel behind the worked bilateral example.

    Period 0: prices (1, 1), quantities (1, 1).
    Period 1: prices (2, 1), quantities (1, 3).
    """
    rows = [
        ("a", 0, 1.0, 1.0),
        ("b", 0, 1.0, 1.0),
        ("a", 1, 2.0, 1.0),
        ("b", 1, 3.0, 3.0),
    ]
    return TransactionPanel(rows)


def random_two_period_panel(rng, n_products=8, allow_zero_quantity=False):
    """Random positive-price panel over two periods for property tests."""
    rows = []
    for i in range(n_products):
        for t in (0, 1):
            price = float(rng.lognormal(1.0, 0.6))
            low = 0 if allow_zero_quantity else 1
            qty = float(rng.integers(low, 10))
            rows.append((f"p{i}", t, price * qty, qty))
    return TransactionPanel(rows)
