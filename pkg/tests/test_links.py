import numpy as np
import pytest

from ordcpm.links import LINKS, LinkFamily, get_link

ALL_LINKS = list(LINKS.values())


def test_known_cdf_values():
    assert LINKS["logit"].cdf(0.0) == pytest.approx(0.5)
    assert LINKS["probit"].cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert LINKS["loglog"].cdf(0.0) == pytest.approx(np.exp(-1.0))


def test_known_pdf_values():
    assert LINKS["logit"].pdf(0.0) == pytest.approx(0.25)
    assert LINKS["probit"].pdf(0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert LINKS["loglog"].pdf(0.0) == pytest.approx(np.exp(-1.0))


def test_known_quantiles():
    assert LINKS["logit"].quantile(0.5) == pytest.approx(0.0)
    assert LINKS["probit"].quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    assert LINKS["loglog"].quantile(np.exp(-1.0)) == pytest.approx(0.0, abs=1e-12)


# float64 probabilities saturate at 1 - 2**-53 (and underflow near 0), so the
# round trip is only information-preserving where G(x) stays representable:
# probit saturates above ~8.2, the Gumbel CDF underflows below ~ -6.5
_ROUND_TRIP_RANGE = {"logit": (-10.0, 10.0), "probit": (-10.0, 8.0), "loglog": (-6.5, 10.0)}


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_round_trip(link):
    lo, hi = _ROUND_TRIP_RANGE[link.kind]
    x = np.linspace(lo, hi, 1000)
    assert np.max(np.abs(link.quantile(link.cdf(x)) - x)) < 1e-8


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_pdf_matches_central_differences(link):
    x = np.linspace(-8.0, 8.0, 321)
    h = 1e-5
    fd = (link.cdf(x + h) - link.cdf(x - h)) / (2 * h)
    assert np.max(np.abs(link.pdf(x) - fd)) < 1e-6


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_quantile_cdf_identity(link):
    p = np.concatenate([
        np.array([1e-8, 1e-6, 1e-3]),
        np.linspace(0.01, 0.99, 99),
        1.0 - np.array([1e-3, 1e-6, 1e-8]),
    ])
    assert np.max(np.abs(link.cdf(link.quantile(p)) - p)) < 1e-10


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_tails_stay_inside_unit_interval(link):
    x = np.array([-700.0, -100.0, -50.0, 50.0, 100.0, 700.0])
    c = link.cdf(x)
    assert np.all(c > 0.0) and np.all(c < 1.0)
    assert np.all(np.diff(link.cdf(np.linspace(-30, 30, 400))) >= 0.0)


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_pdf_positive_and_cdf_monotone(link):
    x = np.linspace(-30.0, 30.0, 500)
    assert np.all(link.pdf(x) >= 0.0)
    c = link.cdf(x)
    assert np.all(np.diff(c) >= 0.0)


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_log_companions_match_direct_values(link):
    x = np.linspace(-6.0, 6.0, 101)
    assert np.allclose(link.log_cdf(x), np.log(link.cdf(x)), rtol=1e-10)
    assert np.allclose(link.log_sf(x), np.log(1.0 - link._cdf(x)), rtol=1e-9)
    assert np.allclose(link.log_pdf(x), np.log(link.pdf(x)), rtol=1e-10)
    # deep tails: log companions remain finite and ordered
    far = np.array([-300.0, 300.0])
    assert np.all(np.isfinite(link.log_cdf(far[0:1])))
    assert np.all(link.log_sf(far[1:2]) < -200.0)


@pytest.mark.parametrize("link", ALL_LINKS, ids=lambda l: l.kind)
def test_dlog_pdf_matches_central_differences(link):
    x = np.linspace(-6.0, 6.0, 61)
    h = 1e-6
    fd = (link.log_pdf(x + h) - link.log_pdf(x - h)) / (2 * h)
    assert np.allclose(link.dlog_pdf(x), fd, atol=1e-5)


def test_domain_errors():
    link = LINKS["probit"]
    with pytest.raises(ValueError):
        link.cdf(np.inf)
    with pytest.raises(ValueError):
        link.pdf(np.nan)
    with pytest.raises(ValueError):
        link.quantile(0.0)
    with pytest.raises(ValueError):
        link.quantile(1.0)
    with pytest.raises(ValueError):
        LinkFamily("cauchit")
    with pytest.raises(ValueError):
        get_link("nope")


def test_get_link_idempotent():
    link = get_link("loglog")
    assert get_link(link) is link
    assert get_link("loglog") == LinkFamily("loglog")
