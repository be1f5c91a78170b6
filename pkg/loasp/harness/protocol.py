"""Leave-one-domain-out (DG) and single-domain (SDG) splits."""

from typing import List, Optional, Sequence

from loasp.types.data import Split
from loasp.types.errors import ConfigurationError

MODES = ("DG", "SDG")


def build_protocol(domains: Sequence[str], mode: str, held_out: str) -> Split:
    """Split ``domains`` into training and test sets.

    Args:
        domains: All available domain ids.
        mode: ``"DG"`` trains on every domain but ``held_out`` and tests on it;
            ``"SDG"`` trains on ``held_out`` alone and tests on all others.
        held_out: The test domain (DG) or the single training domain (SDG).

    Returns:
        A Split with disjoint train and test domain lists.

    Raises:
        ConfigurationError: On an unknown mode or domain, DG with fewer than
            two training domains, or SDG with nothing to test on.

    Example:
        >>> build_protocol(["A", "B", "C", "D"], "DG", "D").train_domains
        ['A', 'B', 'C']
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown protocol mode {mode!r}", valid=MODES)
    if held_out not in domains:
        raise ConfigurationError(f"unknown domain {held_out!r}", valid=list(domains))
    others = [d for d in domains if d != held_out]
    if not others:
        raise ConfigurationError(f"{mode} needs at least two domains, got {list(domains)}")
    if mode == "DG":
        if len(others) < 2:
            raise ConfigurationError(
                f"DG needs at least two training domains, got {others} with {held_out!r} held out"
            )
        return Split(mode="DG", train_domains=others, test_domains=[held_out], held_out=held_out)
    return Split(mode="SDG", train_domains=[held_out], test_domains=others, held_out=held_out)


def protocol_instances(domains: Sequence[str], mode: str, held_out: Optional[str] = None) -> List[Split]:
    """One split for ``held_out``, or one per domain when it is None."""
    targets = [held_out] if held_out is not None else list(domains)
    return [build_protocol(domains, mode, target) for target in targets]
