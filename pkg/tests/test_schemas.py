import numpy as np
import pytest
from pydantic import ValidationError

from jd_bss.core.hermlinalg import exact_jd_pair, herm
from jd_bss.core.schemas import DiagonalPD, HermitianPD

from tests.conftest import random_hpd


def test_hermitian_pd_accepts_batches(rng):
    mats = random_hpd(rng, 4, 2, 3, 3)
    model = HermitianPD(mat=mats)
    assert model.dim == 3
    np.testing.assert_array_equal(model.mat, mats)


def test_hermitian_pd_rejects_asymmetric(rng):
    mat = random_hpd(rng, 3, 3)
    mat[0, 1] += 1e-9
    with pytest.raises(ValidationError, match="conjugate-symmetric"):
        HermitianPD(mat=mat)


def test_hermitian_pd_rejects_indefinite_and_singular():
    with pytest.raises(ValidationError, match="positive definite"):
        HermitianPD(mat=np.diag([1.0, -0.5]))
    with pytest.raises(ValidationError, match="positive definite"):
        HermitianPD(mat=np.diag([1.0, 0.0]))
    with pytest.raises(ValidationError):
        HermitianPD(mat=np.ones((2, 3)))


def test_from_array_symmetrizes_and_floors():
    mat = np.array([[2.0, 1.0 + 1e-6j], [1.0, -1.0]])
    model = HermitianPD.from_array(mat)
    np.testing.assert_array_equal(model.mat, herm(model.mat))
    eigval = np.linalg.eigvalsh(model.mat)
    assert eigval.min() > 0
    assert eigval.min() == pytest.approx(1e-10 * 0.5, rel=1e-3)


def test_diagonal_pd_invariants():
    diag = np.array([[1.0, 2.0], [0.5, 3.0]])
    model = DiagonalPD(diag=diag)
    assert model.dim == 2
    np.testing.assert_array_equal(model.mat[1], np.diag([0.5, 3.0]))
    for bad in ([1.0, 0.0], [1.0, -2.0], [1.0, np.nan]):
        with pytest.raises(ValidationError):
            DiagonalPD(diag=np.array(bad))


def test_exact_jd_diagonals_are_diagonal_pd(rng):
    r1, r2 = random_hpd(rng, 5, 3, 3), random_hpd(rng, 5, 3, 3)
    jd = exact_jd_pair(r1, r2)
    d2 = DiagonalPD(diag=jd.d2)
    np.testing.assert_allclose(herm(jd.w) @ r2 @ jd.w, d2.mat, atol=1e-10)
    assert DiagonalPD(diag=jd.d1).dim == 3
