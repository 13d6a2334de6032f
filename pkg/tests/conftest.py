import pytest

from djl.models import (
    BlackScholesParams,
    JumpToRuinParams,
    KouParams,
    MertonParams,
    ModelSpec,
    NigParams,
    VgParams,
)

BS = ModelSpec(BlackScholesParams(0.2))
MERTON = ModelSpec(MertonParams(sigma=0.2, lam=0.1, mu=-0.1, delta=0.15))
KOU = ModelSpec(KouParams(sigma=0.2, lam=0.3, p=0.5, lambda_plus=15.0, lambda_minus=10.0))
NIG = ModelSpec(NigParams(alpha=5.0, beta=-2.0, delta=0.3))
VG = ModelSpec(VgParams(theta=-0.1, nu=0.4, sigma=0.2))
RUIN = ModelSpec(JumpToRuinParams(sigma=0.2, lam=0.02))

ALL_MODELS = {"bs": BS, "merton": MERTON, "kou": KOU, "nig": NIG, "vg": VG, "ruin": RUIN}


@pytest.fixture(params=sorted(ALL_MODELS))
def any_model(request):
    return ALL_MODELS[request.param]


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
            terminalreporter.write_line(ACCEPTANCE[key])
