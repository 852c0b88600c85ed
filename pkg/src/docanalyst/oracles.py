"""Answer oracles: exhaustive gold-answer computation over master-table rows.

Each oracle is a plain function over ticker->value mappings so the benchmark
generator and its tests can cross-check them against independent
re-implementations. Ties break lexicographically by ticker symbol.

Conventions fixed here so generated gold answers and reference analysis
programs agree bit-for-bit: population variance (divide by N), growth rates
in percent, reductions always over ticker-sorted values.
"""

from __future__ import annotations

from datetime import date

from .errors import OracleError


def top_k_by_metric(values: dict[str, float], k: int, descending: bool = True) -> list[tuple[str, float]]:
    """The k (ticker, value) pairs with the largest (or smallest) values."""
    if k < 1 or k > len(values):
        raise OracleError(f"k={k} out of range for {len(values)} values")
    sign = -1.0 if descending else 1.0
    return sorted(values.items(), key=lambda kv: (sign * kv[1], kv[0]))[:k]


def value_range(values: dict[str, float]) -> tuple[float, float, float]:
    """(maximum, minimum, span) over ticker-sorted values."""
    if not values:
        raise OracleError("range over empty values")
    ordered = [values[t] for t in sorted(values)]
    return max(ordered), min(ordered), max(ordered) - min(ordered)


def population_variance(values: dict[str, float]) -> float:
    """Population variance (divide by N) over ticker-sorted values."""
    if not values:
        raise OracleError("variance over empty values")
    ordered = [values[t] for t in sorted(values)]
    mean = sum(ordered) / len(ordered)
    return sum((x - mean) ** 2 for x in ordered) / len(ordered)


def growth_rates(year1: dict[str, float], year2: dict[str, float]) -> dict[str, float]:
    """Percent growth per ticker present in both years."""
    rates: dict[str, float] = {}
    for ticker in sorted(set(year1) & set(year2)):
        base = year1[ticker]
        if base == 0:
            raise OracleError(f"zero base value for {ticker}; growth rate undefined")
        rates[ticker] = (year2[ticker] - base) / base * 100.0
    return rates


def changed_values(year1: dict[str, str], year2: dict[str, str]) -> list[str]:
    """Tickers whose categorical value differs between the two years."""
    return sorted(
        t for t in set(year1) & set(year2) if year1[t].strip() != year2[t].strip()
    )


def interval_days(start_iso: str, end_iso: str) -> int:
    """Whole days between two ISO dates (end - start)."""
    try:
        return (date.fromisoformat(end_iso) - date.fromisoformat(start_iso)).days
    except ValueError as exc:
        raise OracleError(f"bad ISO date: {exc}") from exc


def outliers_two_sigma(rates: dict[str, float]) -> list[str]:
    """Tickers whose value falls outside mean +/- 2 * population std dev."""
    if len(rates) < 2:
        raise OracleError("outlier detection needs at least 2 values")
    ordered = [rates[t] for t in sorted(rates)]
    mean = sum(ordered) / len(ordered)
    variance = sum((x - mean) ** 2 for x in ordered) / len(ordered)
    sigma = variance ** 0.5
    lo, hi = mean - 2.0 * sigma, mean + 2.0 * sigma
    return sorted(t for t, v in rates.items() if v < lo or v > hi)
