"""NHL rink geometry, in feet, with the origin at center ice."""

import math

GOAL_LINE_X = 89.0
BLUE_LINE_X = 25.0
BOARDS_X = 100.0
HALF_WIDTH = 42.5

NET = (GOAL_LINE_X, 0.0)


def compute_geometry(x_std: float, y_std: float) -> tuple[float, float]:
    """Distance (ft) and angle (deg) from the net at (89, 0).

    The angle is 0 straight out from the net and exceeds 90 behind the goal line.
    """
    dx = GOAL_LINE_X - x_std
    return math.hypot(dx, y_std), math.degrees(math.atan2(abs(y_std), dx))
