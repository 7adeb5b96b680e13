"""Minimal deterministic SVG line plots for the mission telemetry.

The figures are drawn directly (polylines, ticks, legends) so the run
artifacts depend on nothing beyond the simulator itself and diff cleanly
between runs.
"""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L = 64.0
_MARGIN_R = 16.0
_MARGIN_T = 28.0
_MARGIN_B = 40.0


def _nice_ticks(lo: float, hi: float, target: int = 5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0]
    if hi <= lo:
        pad = 1.0 if lo == 0.0 else abs(lo) * 0.1
        lo, hi = lo - pad, hi + pad
    span = hi - lo
    raw = span / max(target, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min((c * mag for c in (1.0, 2.0, 5.0, 10.0)),
               key=lambda s: abs(span / s - target))
    first = np.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * span:
        ticks.append(0.0 if abs(v) < 1e-12 * span else v)
        v += step
    return ticks or [lo]


def _fmt(v: float) -> str:
    return "%.6g" % v


class Panel:
    """One stacked axes: several (x, y) series plus decorations."""

    def __init__(self, ylabel: str, series, vlines=(), ylim=None):
        self.ylabel = ylabel
        self.series = series  # list of (x, y, label)
        self.vlines = vlines  # [(x, label)]
        self.ylim = ylim


def write_svg(path, panels, title: str = "", xlabel: str = "Time (s)",
              width: int = 880, panel_height: int = 230):
    """Render stacked panels sharing the x axis into an SVG file."""
    n = len(panels)
    height = _MARGIN_T + n * panel_height + _MARGIN_B
    xmin = min(float(np.min(s[0])) for p in panels for s in p.series)
    xmax = max(float(np.max(s[0])) for p in panels for s in p.series)
    if xmax <= xmin:
        xmax = xmin + 1.0
    plot_w = width - _MARGIN_L - _MARGIN_R

    def sx(x):
        return _MARGIN_L + (x - xmin) / (xmax - xmin) * plot_w

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height:.0f}" font-family="Helvetica, Arial, sans-serif">')
    out.append(f'<rect width="{width}" height="{height:.0f}" fill="white"/>')
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" font-size="14" '
                   f'text-anchor="middle">{title}</text>')

    xticks = _nice_ticks(xmin, xmax, 8)
    for ip, panel in enumerate(panels):
        top = _MARGIN_T + ip * panel_height + 8.0
        bot = _MARGIN_T + (ip + 1) * panel_height - 26.0
        ph = bot - top

        ymin = min(float(np.min(s[1])) for s in panel.series)
        ymax = max(float(np.max(s[1])) for s in panel.series)
        if panel.ylim is not None:
            ymin, ymax = panel.ylim
        if ymax <= ymin:
            pad = 1.0 if ymin == 0.0 else abs(ymin) * 0.1
            ymin, ymax = ymin - pad, ymax + pad
        pad = 0.05 * (ymax - ymin)
        ymin -= pad
        ymax += pad

        def sy(y, ymin=ymin, ymax=ymax, top=top, ph=ph):
            return top + (ymax - y) / (ymax - ymin) * ph

        out.append(f'<rect x="{_MARGIN_L}" y="{top:.1f}" width="{plot_w:.1f}" '
                   f'height="{ph:.1f}" fill="none" stroke="#444" stroke-width="1"/>')
        for tx in xticks:
            if xmin <= tx <= xmax:
                out.append(f'<line x1="{sx(tx):.1f}" y1="{bot:.1f}" '
                           f'x2="{sx(tx):.1f}" y2="{bot + 4:.1f}" stroke="#444"/>')
                if ip == n - 1:
                    out.append(f'<text x="{sx(tx):.1f}" y="{bot + 16:.1f}" '
                               f'font-size="10" text-anchor="middle">{_fmt(tx)}</text>')
        for ty in _nice_ticks(ymin, ymax):
            if ymin <= ty <= ymax:
                out.append(f'<line x1="{_MARGIN_L - 4}" y1="{sy(ty):.1f}" '
                           f'x2="{_MARGIN_L}" y2="{sy(ty):.1f}" stroke="#444"/>')
                out.append(f'<text x="{_MARGIN_L - 7}" y="{sy(ty) + 3:.1f}" '
                           f'font-size="10" text-anchor="end">{_fmt(ty)}</text>')
                out.append(f'<line x1="{_MARGIN_L}" y1="{sy(ty):.1f}" '
                           f'x2="{_MARGIN_L + plot_w:.1f}" y2="{sy(ty):.1f}" '
                           f'stroke="#ddd" stroke-width="0.5"/>')

        for x, lbl in panel.vlines:
            if xmin <= x <= xmax:
                out.append(f'<line x1="{sx(x):.1f}" y1="{top:.1f}" '
                           f'x2="{sx(x):.1f}" y2="{bot:.1f}" stroke="#999" '
                           f'stroke-dasharray="4,3" stroke-width="0.8"/>')
                out.append(f'<text x="{sx(x) + 2:.1f}" y="{top + 10:.1f}" '
                           f'font-size="9" fill="#666">{lbl}</text>')

        for k, (x, y, label) in enumerate(panel.series):
            color = _COLORS[k % len(_COLORS)]
            pts = " ".join(f"{sx(float(xi)):.2f},{sy(float(yi)):.2f}"
                           for xi, yi in zip(x, y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.2"/>')
            out.append(f'<text x="{_MARGIN_L + plot_w - 6:.1f}" '
                       f'y="{top + 13 + 12 * k:.1f}" font-size="10" '
                       f'text-anchor="end" fill="{color}">{label}</text>')

        out.append(f'<text x="14" y="{top + ph / 2:.1f}" font-size="11" '
                   f'text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{panel.ylabel}</text>')

    out.append(f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{height - 10:.1f}" '
               f'font-size="11" text-anchor="middle">{xlabel}</text>')
    out.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def mission_figures(result, out_dir):
    """Write the five standard telemetry figures; returns the file paths."""
    import os

    tl = result.telemetry
    t = tl.t
    c = tl.columns
    ev = [(tv, lbl) for lbl, _, tv in result.events.as_rows()]
    paths = []

    def fig(name, panels, title):
        p = os.path.join(out_dir, name)
        write_svg(p, panels, title=title)
        paths.append(p)

    wrel = c["omega_rel"]
    qrel = c["q_rel"]
    fig("fig_relative_motion.svg", [
        Panel("w_rel (rad/s)", [(t, wrel[:, i], "xyz"[i]) for i in range(3)], ev),
        Panel("q_rel", [(t, qrel[:, i], ["q1", "q2", "q3", "q0"][i])
                        for i in range(4)], ev),
    ], "Relative angular velocity and attitude, target vs. base")

    rrel = c["r_rel"]
    erel = c["eta_rel"]
    fig("fig_relative_pose.svg", [
        Panel("r_rel (m)", [(t, rrel[:, i], "xyz"[i]) for i in range(3)], ev),
        Panel("eta_rel", [(t, erel[:, i], ["e1", "e2", "e3", "e0"][i])
                          for i in range(4)], ev),
    ], "Grapple-fixture pose relative to the end-effector")

    vrel = c["v_rel"]
    wree = c["w_rel_ee"]
    fig("fig_relative_velocity.svg", [
        Panel("v_rel (m/s)", [(t, vrel[:, i], "xyz"[i]) for i in range(3)], ev),
        Panel("w_rel (rad/s)", [(t, wree[:, i], "xyz"[i]) for i in range(3)], ev),
    ], "Grapple-fixture velocity relative to the end-effector")

    taur = tl.raw[:, 30:33]
    taue = tl.raw[:, 33:36]
    fig("fig_torques.svg", [
        Panel("tau_r (N m)", [(t, taur[:, i], "xyz"[i]) for i in range(3)], ev),
        Panel("tau_e (N m)", [(t, taue[:, i], "xyz"[i]) for i in range(3)], ev),
    ], "Reaction-wheel and end-effector torques")

    fig("fig_momentum.svg", [
        Panel("|h| (N m s)", [
            (t, c["h_target"], "target"),
            (t, c["h_servicer"], "servicer"),
            (t, c["h_wheels"], "wheels"),
            (t, np.linalg.norm(c["h_total"], axis=1), "total"),
        ], ev),
    ], "Angular momentum magnitudes")

    return paths
