"""Security profiles: which firmware-generation bugs a controller
instance reproduces, and the optional MAC firewall.

Two published regressions are switchable:

* CVE-2018-19860 -- the BPCS subtype handler table is indexed without a
  range check, so subtypes above 0x05 fall through into adjacent
  handler tables.  What an out-of-range subtype reaches differs per
  firmware build; the overflow map below is explicitly synthetic, with
  the one behavior known across vulnerable builds (0x95 lands on the
  device-under-test HCI handler) as its default.
* CVE-2019-6994 -- encryption setup accepted out of pairing order: a
  start-encryption request during a still-pending pairing drives the
  key calculation into a crash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class HandlerAction(Enum):
    """Effect of an out-of-bounds BPCS subtype on a vulnerable build."""

    DUT_MODE = "dut_mode"
    CRASH = "crash"
    NOP = "nop"


BPCS_DUT_SUBTYPE = 0x95


@dataclass
class SecurityProfile:
    bpcs_bounds_check: bool = True
    encryption_order_check: bool = True
    firewall_allowlist: set[bytes] | None = None
    bpcs_overflow_map: dict[int, HandlerAction] = field(
        default_factory=lambda: {BPCS_DUT_SUBTYPE: HandlerAction.DUT_MODE}
    )
    overflow_default: HandlerAction = HandlerAction.CRASH

    def overflow_action(self, subtype: int) -> HandlerAction:
        return self.bpcs_overflow_map.get(subtype, self.overflow_default)

    def firewall_allows(self, mac: bytes) -> bool:
        return self.firewall_allowlist is None or mac in self.firewall_allowlist

    def fingerprint(self) -> tuple:
        """Hashable identity for state snapshots."""
        allow = (
            None
            if self.firewall_allowlist is None
            else tuple(sorted(self.firewall_allowlist))
        )
        return (
            self.bpcs_bounds_check,
            self.encryption_order_check,
            allow,
            tuple(sorted((k, v.value) for k, v in self.bpcs_overflow_map.items())),
            self.overflow_default.value,
        )


def vulnerable_profile() -> SecurityProfile:
    """Both checks missing, as on the affected firmware builds."""
    return SecurityProfile(bpcs_bounds_check=False, encryption_order_check=False)


def patched_profile() -> SecurityProfile:
    return SecurityProfile(bpcs_bounds_check=True, encryption_order_check=True)


PROFILE_FACTORIES = {
    "vulnerable": vulnerable_profile,
    "patched": patched_profile,
    "default": patched_profile,
}
