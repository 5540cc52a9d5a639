"""Power, energy-efficiency, and telemetry data-rate calculators.

All quantities are plain deterministic arithmetic over SI units (joules,
watts, bits per second).  The first classification stage is the in-chip
random projection (D x L multiply-accumulates amortizing a fixed analog +
digital power draw at the classification rate); the second stage is the
trained output layer ((M+1) x L MACs at a fixed digital energy per MAC).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class BudgetInputs:
    """Dimensions, rates, and device constants for the budget arithmetic."""

    d: int = 40  # input channels into the projection stage
    l: int = 60  # hidden neurons
    c: int = 12  # output classes (second-stage columns)
    f_class_hz: float = 50.0  # classification rate
    p_analog_w: float = 360e-9  # fixed analog-domain power
    p_digital_w: float = 54e-9  # on-chip digital power
    e_mac_digital_j: float = 11e-12  # second-stage energy per MAC
    f_bio_hz: float = 100.0  # per-channel event rate on the telemetry link
    f_deco_hz: float = 50.0  # decoder output rate
    address_bits: int = 8
    channel_count: int = 256
    raw_channels: int = 100
    raw_sample_rate_hz: float = 20e3
    raw_resolution_bits: int = 10

    def validate(self) -> None:
        if self.d < 1 or self.l < 1:
            raise ValueError("dimensions d and l must be >= 1")
        if self.c < 2:
            raise ValueError("class count c must be >= 2")
        positive = {
            "f_class_hz": self.f_class_hz,
            "p_analog_w": self.p_analog_w,
            "p_digital_w": self.p_digital_w,
            "e_mac_digital_j": self.e_mac_digital_j,
            "f_bio_hz": self.f_bio_hz,
            "f_deco_hz": self.f_deco_hz,
            "raw_sample_rate_hz": self.raw_sample_rate_hz,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name, value in [
            ("address_bits", self.address_bits),
            ("channel_count", self.channel_count),
            ("raw_channels", self.raw_channels),
            ("raw_resolution_bits", self.raw_resolution_bits),
        ]:
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")


@dataclass(frozen=True)
class EnergyBudget:
    """Per-classification and per-MAC energies (joules)."""

    e_per_classify_stage1: float
    e_per_mac_stage1: float
    e_per_classify_total: float
    e_per_mac_combined: float


@dataclass(frozen=True)
class DataRates:
    """Telemetry rates (bits per second) at three processing depths."""

    r_raw_bps: float  # digitized broadband samples
    r_conv_bps: float  # spike events as address-coded packets
    r_prop_bps: float  # decoded class labels only


@dataclass(frozen=True)
class BudgetReport:
    """Combined energy + data-rate report with the inputs that produced it."""

    inputs: BudgetInputs
    energy: EnergyBudget
    rates: DataRates


def energy_report(inputs: BudgetInputs) -> EnergyBudget:
    """Energy per classification and per MAC for both stages.

    Stage 1 amortizes the fixed chip power over classifications and over
    its d*l MACs; the full pipeline adds c*l second-stage MACs at a fixed
    digital energy each.
    """
    inputs.validate()
    e_stage1 = (inputs.p_analog_w + inputs.p_digital_w) / inputs.f_class_hz
    macs_stage1 = inputs.d * inputs.l
    macs_stage2 = inputs.c * inputs.l
    e_total = e_stage1 + macs_stage2 * inputs.e_mac_digital_j
    return EnergyBudget(
        e_per_classify_stage1=e_stage1,
        e_per_mac_stage1=e_stage1 / macs_stage1,
        e_per_classify_total=e_total,
        e_per_mac_combined=e_total / (macs_stage1 + macs_stage2),
    )


def datarate_report(inputs: BudgetInputs) -> DataRates:
    """Telemetry bit rates: raw waveforms, address-coded events, labels."""
    inputs.validate()
    # ceil(log2 c) bits per emitted label, exactly, via integer arithmetic
    label_bits = (inputs.c - 1).bit_length()
    return DataRates(
        r_raw_bps=inputs.raw_channels * inputs.raw_sample_rate_hz * inputs.raw_resolution_bits,
        r_conv_bps=inputs.address_bits * inputs.channel_count * inputs.f_bio_hz,
        r_prop_bps=inputs.f_deco_hz * label_bits,
    )


def budget_report(inputs: BudgetInputs) -> BudgetReport:
    return BudgetReport(inputs=inputs, energy=energy_report(inputs), rates=datarate_report(inputs))


def _si(value: float, unit: str) -> str:
    """Engineering-notation rendering for sub-unit values: 3.45 pJ, 414.00 nW."""
    for scale, prefix in [(1.0, ""), (1e-3, "m"), (1e-6, "u"), (1e-9, "n"), (1e-12, "p")]:
        if value >= scale:
            return f"{value / scale:.2f} {prefix}{unit}"
    return f"{value / 1e-15:.2f} f{unit}"


def _rate(bps: float) -> str:
    """Bit-rate rendering: 20.00 Mbps, 204.80 kbps, 200.00 bps."""
    for scale, unit in [(1e6, "Mbps"), (1e3, "kbps")]:
        if bps >= scale:
            return f"{bps / scale:.2f} {unit}"
    return f"{bps:.2f} bps"


def format_budget(report: BudgetReport) -> str:
    """Aligned, human-readable text table of the full budget."""
    inp, e, r = report.inputs, report.energy, report.rates
    rows = [
        ("dimensions (d x l, c)", f"{inp.d} x {inp.l}, {inp.c}"),
        ("classification rate", f"{inp.f_class_hz:g} Hz"),
        ("stage-1 power", _si(inp.p_analog_w + inp.p_digital_w, "W")),
        ("energy/classify (stage 1)", _si(e.e_per_classify_stage1, "J")),
        ("energy/MAC (stage 1)", _si(e.e_per_mac_stage1, "J/MAC")),
        ("energy/classify (total)", _si(e.e_per_classify_total, "J")),
        ("energy/MAC (combined)", _si(e.e_per_mac_combined, "J/MAC")),
        ("raw waveform rate", _rate(r.r_raw_bps)),
        ("event-address rate", _rate(r.r_conv_bps)),
        ("decoded-label rate", _rate(r.r_prop_bps)),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


def budget_json(report: BudgetReport) -> str:
    """Byte-deterministic JSON rendering of the full budget."""
    payload = {
        "inputs": asdict(report.inputs),
        "energy": asdict(report.energy),
        "rates": asdict(report.rates),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))
