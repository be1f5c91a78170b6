"""Tests for DG and SDG splits."""

import pytest

from loasp.harness.protocol import build_protocol, protocol_instances
from loasp.types.errors import ConfigurationError

DOMAINS = ["A", "B", "C", "D"]


def test_leave_one_domain_out():
    """DG holding out D trains on A, B, C and tests on D."""
    split = build_protocol(DOMAINS, "DG", "D")
    assert split.train_domains == ["A", "B", "C"]
    assert split.test_domains == ["D"]
    assert split.held_out == "D"


def test_single_domain():
    """SDG on A trains on A and tests on the other three."""
    split = build_protocol(DOMAINS, "SDG", "A")
    assert split.train_domains == ["A"]
    assert split.test_domains == ["B", "C", "D"]


@pytest.mark.parametrize("mode", ["DG", "SDG"])
def test_splits_are_disjoint_and_cover_all_domains(mode):
    """Every instance partitions the domain list."""
    for split in protocol_instances(DOMAINS, mode):
        assert not set(split.train_domains) & set(split.test_domains)
        assert sorted(split.train_domains + split.test_domains) == DOMAINS


def test_instances():
    """None runs every domain in turn; a named domain runs once."""
    assert [s.held_out for s in protocol_instances(DOMAINS, "DG")] == DOMAINS
    assert len(protocol_instances(DOMAINS, "SDG", "C")) == 1


class TestInvalidProtocol:
    """Configuration errors."""

    def test_unknown_mode(self):
        """Only DG and SDG exist."""
        with pytest.raises(ConfigurationError) as exc_info:
            build_protocol(DOMAINS, "LOO", "A")
        assert exc_info.value.valid == ["DG", "SDG"]

    def test_unknown_domain(self):
        """The held-out domain must be one of the inputs."""
        with pytest.raises(ConfigurationError):
            build_protocol(DOMAINS, "DG", "E")

    @pytest.mark.parametrize("mode", ["DG", "SDG"])
    def test_single_available_domain(self, mode):
        """One domain leaves nothing on the other side."""
        with pytest.raises(ConfigurationError):
            build_protocol(["A"], mode, "A")

    def test_dg_needs_two_training_domains(self):
        """Holding one of two domains out leaves a single training domain."""
        with pytest.raises(ConfigurationError, match="at least two training domains"):
            build_protocol(["A", "B"], "DG", "B")

    def test_sdg_on_two_domains(self):
        """SDG only needs one domain on each side."""
        split = build_protocol(["A", "B"], "SDG", "B")
        assert split.train_domains == ["B"]
        assert split.test_domains == ["A"]
