"""Probability-curve plots as hand-rendered SVG.

The SVG is assembled from formatted strings with no timestamps or
environment-dependent metadata, so identical inputs give identical bytes.
"""

WIDTH, HEIGHT = 640, 360
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 52, 16, 24, 40


def _fmt(v):
    return "%.2f" % v


def curve_svg(curve, threshold=0.5):
    """One video's probability-vs-frame plot.

    Draws the probability polyline, a horizontal threshold line, and a
    dashed vertical marker at the accident frame for positive videos.
    """
    n = len(curve.probs)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def x_at(frame):  # 1-based frame
        if n == 1:
            return MARGIN_L + plot_w / 2.0
        return MARGIN_L + (frame - 1) / (n - 1) * plot_w

    def y_at(p):
        return MARGIN_T + (1.0 - p) * plot_h

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (WIDTH, HEIGHT, WIDTH, HEIGHT),
        '<rect width="%d" height="%d" fill="white"/>' % (WIDTH, HEIGHT),
        '<rect x="%d" y="%d" width="%d" height="%d" fill="none" stroke="#444"/>'
        % (MARGIN_L, MARGIN_T, plot_w, plot_h),
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_at(tick)
        parts.append('<line x1="%s" y1="%s" x2="%s" y2="%s" stroke="#ddd"/>'
                     % (_fmt(MARGIN_L), _fmt(y), _fmt(MARGIN_L + plot_w), _fmt(y)))
        parts.append('<text x="%s" y="%s" font-size="11" text-anchor="end" '
                     'fill="#333">%s</text>' % (_fmt(MARGIN_L - 6), _fmt(y + 4), _fmt(tick)))
    for frame in range(1, n + 1):
        if n <= 10 or frame == 1 or frame == n or frame % max(1, n // 8) == 0:
            x = x_at(frame)
            parts.append('<text x="%s" y="%s" font-size="11" text-anchor="middle" '
                         'fill="#333">%d</text>'
                         % (_fmt(x), _fmt(MARGIN_T + plot_h + 16), frame))
    ty = y_at(threshold)
    parts.append('<line class="threshold" x1="%s" y1="%s" x2="%s" y2="%s" '
                 'stroke="#b55" stroke-width="1.5"/>'
                 % (_fmt(MARGIN_L), _fmt(ty), _fmt(MARGIN_L + plot_w), _fmt(ty)))
    parts.append('<text x="%s" y="%s" font-size="11" fill="#b55">q=%s</text>'
                 % (_fmt(MARGIN_L + plot_w - 44), _fmt(ty - 5), _fmt(threshold)))
    if curve.positive and curve.accident_frame is not None:
        ax = x_at(curve.accident_frame)
        parts.append('<line class="accident" x1="%s" y1="%s" x2="%s" y2="%s" '
                     'stroke="#d22" stroke-width="1.5" stroke-dasharray="6 4"/>'
                     % (_fmt(ax), _fmt(MARGIN_T), _fmt(ax), _fmt(MARGIN_T + plot_h)))
        parts.append('<text x="%s" y="%s" font-size="11" fill="#d22" '
                     'text-anchor="middle">y=%d</text>'
                     % (_fmt(ax), _fmt(MARGIN_T - 8), curve.accident_frame))
    pts = " ".join("%s,%s" % (_fmt(x_at(i + 1)), _fmt(y_at(p)))
                   for i, p in enumerate(curve.probs))
    parts.append('<polyline points="%s" fill="none" stroke="#26c" stroke-width="2"/>' % pts)
    parts.append('<text x="%s" y="%s" font-size="12" fill="#111">%s</text>'
                 % (_fmt(MARGIN_L), _fmt(HEIGHT - 10), curve.video_id))
    parts.append('<text x="%s" y="%s" font-size="12" fill="#111" '
                 'transform="rotate(-90 14 %d)">P(accident)</text>'
                 % ("14", _fmt(HEIGHT / 2.0), HEIGHT // 2))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
