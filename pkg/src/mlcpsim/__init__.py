"""Behavioral simulator of a mixed-signal ELM neural decoder co-processor.

Subpackages cover the full decoding chain: spike dataset I/O and synthesis
(`spikeio`), the bit-exact digital input path (`frontend`), the analog
multiplier/neuron fabric (`analog`), output-weight training (`training`),
runtime decoding and evaluation (`decoder`), and power/data-rate budgeting
(`budget`).  `cli` ties everything together as a command-line tool.
"""

__version__ = "0.1.0"
