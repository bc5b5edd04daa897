import pytest

from maxmatch import kernels
from maxmatch.gradcheck import format_report, run_gradcheck

BACKENDS = kernels.available_backends()


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_gradcheck_passes(backend):
    report = run_gradcheck(seed=1, per_cell=2, backend=BACKENDS[backend])
    assert report.ok, format_report(report)
    assert max(report.max_error().values()) < 1e-6
    assert set(report.counts().values()) == {18}


def corrupted(F, offsets, G, cand, true_pos, variant, sim, prob, lam, scale, dF, dG,
              want_grad=True, terms=None):
    out = kernels.batch_loss_grad(F, offsets, G, cand, true_pos, variant, sim, prob, lam,
                                  scale, dF, dG, want_grad, terms)
    dG *= 1.05
    return out


def test_gradcheck_catches_wrong_gradient():
    report = run_gradcheck(seed=0, per_cell=2, variants=("pairwise",), tasks=("rs",),
                           backend=corrupted)
    assert not report.ok
    assert report.failures()
    assert "FAIL" in format_report(report)


def test_gradcheck_deterministic():
    a = run_gradcheck(seed=3, per_cell=1, tasks=("mil",), backend=BACKENDS["python"])
    b = run_gradcheck(seed=3, per_cell=1, tasks=("mil",), backend=BACKENDS["python"])
    assert [r.rel_error for r in a.results] == [r.rel_error for r in b.results]
