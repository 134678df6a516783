"""Step-decay learning-rate schedule expressed in iterations."""

from typing import List, Sequence, Tuple

from src.errors import ConfigError

Milestones = List[Tuple[int, float]]

AUTO = "auto"


def parse_schedule(text: str, iterations: int) -> Milestones:
    """Turn a schedule setting into (iteration, multiplier) milestones.

    ``auto`` places two x0.1 steps evenly across the budget (at 1/3 and 2/3
    of ``iterations``); an empty string is a constant rate; otherwise the
    text is ``iter:mult`` pairs separated by commas.

    Args:
        text: Schedule setting
        iterations: Total training iterations

    Returns:
        Validated milestones
    """
    text = text.strip()
    if text == AUTO:
        if iterations < 3:
            return []
        return validate_schedule([(iterations // 3, 0.1), (2 * iterations // 3, 0.1)])
    if not text:
        return []
    milestones = []
    for part in text.split(","):
        try:
            it, mult = part.split(":")
            milestones.append((int(it), float(mult)))
        except ValueError:
            raise ConfigError(f"bad schedule entry {part!r}; expected iteration:multiplier")
    return validate_schedule(milestones)


def validate_schedule(milestones: Sequence[Tuple[int, float]]) -> Milestones:
    """Check iterations strictly increase and multipliers are positive."""
    previous = -1
    for it, mult in milestones:
        if it <= previous:
            raise ConfigError(f"schedule iterations must strictly increase (got {it} after {previous})")
        if mult <= 0:
            raise ConfigError(f"schedule multiplier must be positive, got {mult}")
        previous = it
    return [(int(it), float(mult)) for it, mult in milestones]


def lr_at(lr0: float, schedule: Sequence[Tuple[int, float]], iteration: int) -> float:
    """lr0 times every multiplier whose milestone is at or before ``iteration``."""
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    lr = lr0
    for it, mult in schedule:
        if it <= iteration:
            lr *= mult
    return lr
