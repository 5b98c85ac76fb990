import numpy as np
import pytest

from roughfig import (
    RECIPES,
    MissingInputError,
    SchemaError,
    render_all,
    running_mean,
)

from conftest import fake_chain, fake_evolution, write_artifact


@pytest.mark.parametrize("name", sorted(RECIPES))
def test_each_recipe_renders(name, data_dir, tmp_path):
    recipe = RECIPES[name]
    paths = {role: data_dir / fname for role, fname in recipe.inputs}
    out = recipe.render(paths, tmp_path / f"{name}.png")
    assert out.exists()
    assert out.stat().st_size > 1000


def test_render_all_covers_every_recipe(data_dir, tmp_path):
    made = render_all(data_dir, tmp_path / "figs")
    assert len(made) == len(RECIPES)
    assert all(p.exists() for p in made)
    assert {p.stem for p in made} == set(RECIPES)


def test_rendering_is_deterministic(data_dir, tmp_path):
    recipe = RECIPES["ground-state-kink"]
    paths = {role: data_dir / fname for role, fname in recipe.inputs}
    a = recipe.render(paths, tmp_path / "a.png")
    b = recipe.render(paths, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()


def test_running_mean_of_linear_ramp():
    t = np.linspace(0.0, 4.0, 41)
    tm, rm = running_mean(t, t)
    # time average of a ramp from zero grows at half the slope
    assert np.allclose(rm, tm / 2.0)
    assert tm[0] == t[1]


def test_running_mean_needs_two_samples():
    with pytest.raises(ValueError):
        running_mean(np.array([0.0]), np.array([1.0]))


def test_missing_column_fails_loudly(data_dir, tmp_path):
    broken_dir = tmp_path / "broken"
    broken_dir.mkdir()
    src = (data_dir / "gskink64.csv").read_text()
    (broken_dir / "gskink64.csv").write_text(src.replace(",K,", ",K_typo,"))
    recipe = RECIPES["ground-state-kink"]
    with pytest.raises(SchemaError, match="K"):
        recipe.render({"scan": broken_dir / "gskink64.csv"}, tmp_path / "x.png")


def test_missing_input_file_fails_loudly(data_dir, tmp_path):
    recipe = RECIPES["thermal-kink"]
    with pytest.raises(MissingInputError, match="absent.csv"):
        recipe.render({"scan": tmp_path / "absent.csv"}, tmp_path / "x.png")


def test_unassigned_role_fails_loudly(tmp_path):
    recipe = RECIPES["truncation-sensitivity"]
    with pytest.raises(MissingInputError, match="plateau_hi"):
        recipe.render(
            {"plateau_lo": tmp_path / "a.csv"}, tmp_path / "x.png"
        )


def test_model_field_grids_must_match(tmp_path):
    # one chain run sits off the full-model grid (0.9 instead of 0.75)
    paths = {
        "full_025": fake_evolution(tmp_path / "f1.csv", g=0.25, chi=64),
        "full_050": fake_evolution(tmp_path / "f2.csv", g=0.5, chi=64),
        "full_075": fake_evolution(tmp_path / "f3.csv", g=0.75, chi=64),
        "chain_025": fake_chain(tmp_path / "c1.csv", g=0.25, chi=64),
        "chain_050": fake_chain(tmp_path / "c2.csv", g=0.5, chi=64),
        "chain_075": fake_chain(tmp_path / "c3.csv", g=0.9, chi=64),
    }
    with pytest.raises(MissingInputError, match="field grids differ"):
        RECIPES["kink-running-mean"].render(paths, tmp_path / "x.png")


def test_empty_artifact_reports_no_rows(tmp_path):
    path = write_artifact(
        tmp_path / "gskink64.csv",
        "roughsim-scan-1",
        {"lx": 64},
        {"g": [], "K": [], "n_max": []},
    )
    recipe = RECIPES["ground-state-kink"]
    with pytest.raises(Exception, match="no data rows"):
        recipe.render({"scan": path}, tmp_path / "x.png")
