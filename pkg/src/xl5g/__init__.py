"""Cross-layer software-defined 5G toolkit.

Submodules cover the base-station dataset (``geo_dataset``), the network
model and resource pool, match-action rule tables, slicing, the controller,
a discrete-event data plane and the coverage/QoS experiments.
"""

from .controlplane import ControlPlane, GlobalViewDB, QosEvent, joint_optimize
from .dataplane_sim import SimRun
from .experiments import EnergyConfig, QosConfig, run_energy, run_qos
from .geo_dataset import load_fixture
from .netmodel import ElementKind, Protocol, Topology, eid
from .ruleengine import FlowHeader, FlowMatch, FlowRule, Packet, PhyMatch, PhyRule, RuleTable
from .scenario import build_network, build_simulation, bundled_scenario
from .virtualization import FlowSpace, Slice, SliceRegistry

__version__ = "0.1.0"

__all__ = [
    "ControlPlane", "GlobalViewDB", "QosEvent", "joint_optimize", "SimRun",
    "EnergyConfig", "QosConfig", "run_energy", "run_qos", "load_fixture",
    "ElementKind", "Protocol", "Topology", "eid",
    "FlowHeader", "FlowMatch", "FlowRule", "Packet", "PhyMatch", "PhyRule", "RuleTable",
    "build_network", "build_simulation", "bundled_scenario",
    "FlowSpace", "Slice", "SliceRegistry", "__version__",
]
