import pytest

from app.core.errors import (
    ConfigParseError,
    DegenerateGeometryError,
    InvalidArgumentError,
    LowContrastError,
    NoLineError,
    NoPalletAtDepthError,
    NoPalletEvidenceError,
    PalletProjError,
    SameHeightError,
)


@pytest.mark.parametrize(
    "error, exit_code",
    [
        (DegenerateGeometryError, 2),
        (SameHeightError, 2),
        (NoLineError, 3),
        (LowContrastError, 3),
        (ConfigParseError, 4),
        (InvalidArgumentError, 4),
        (NoPalletEvidenceError, 5),
        (NoPalletAtDepthError, 5),
    ],
)
def test_exit_codes(error, exit_code):
    assert error("x").exit_code == exit_code
    assert isinstance(error("x"), PalletProjError)


def test_codes_are_distinct():
    errors = [
        DegenerateGeometryError, SameHeightError, NoLineError, LowContrastError,
        ConfigParseError, InvalidArgumentError, NoPalletEvidenceError, NoPalletAtDepthError,
    ]
    assert len({e.code for e in errors}) == len(errors)


def test_stage_is_kept_from_the_first_stage():
    error = LowContrastError("flanks too similar")
    assert str(error) == "flanks too similar"
    error.with_stage("yaw").with_stage("position")
    assert error.stage == "yaw"
    assert str(error) == "[yaw] flanks too similar"


def test_invalid_argument_is_a_value_error():
    with pytest.raises(ValueError):
        raise InvalidArgumentError("bad")
