import numpy as np

from isotorus import plotting


def _is_svg(path) -> bool:
    with open(path) as f:
        text = f.read()
    return text.lstrip().startswith("<?xml") and "<svg" in text


def test_line_plot_drops_nonpositive_on_log_axes(tmp_path):
    j = np.arange(1, 20)
    path = plotting.line_plot(
        str(tmp_path / "figs" / "decay.svg"),
        {"diff": (j, np.exp(-j)), "with zero": (j, np.where(j > 5, 0.0, 1.0 / j))},
        yscale="log",
        title="decay",
    )
    assert _is_svg(path)


def test_stem_plot(tmp_path):
    path = plotting.stem_plot(str(tmp_path / "stem.svg"), [0.1, 0.5, 2.0], [1e-3, 0.0, 0.2])
    assert _is_svg(path)


def test_scatter_fit_plot(tmp_path):
    x = np.array([0.1, 0.2, 0.3])
    path = plotting.scatter_fit_plot(str(tmp_path / "fit.svg"), x, 2.0 * x, 2.0, "width", "|C|")
    assert _is_svg(path)
