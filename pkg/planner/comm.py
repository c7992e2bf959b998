# planner/comm.py
from schemas.planner.schemas import CommModel
from utils.exceptions import LabErrorReason, require


def intra_node(comm: CommModel) -> bool:
    return comm.ep_degree <= comm.gpus_per_node


def a2a_time(n_bytes: float, comm: CommModel) -> float:
    """One all-to-all: expert groups that fit in a node use the node fabric, wider ones the network."""
    require(n_bytes >= 0, LabErrorReason.INVALID_ARGUMENT, "byte count must be non-negative", bytes=n_bytes)
    bandwidth = comm.intra_bw if intra_node(comm) else comm.inter_bw
    return n_bytes / bandwidth


def moe_comm_time(n_bytes: float, comm: CommModel) -> float:
    """Exposed time of one MoE layer's dispatch and combine all-to-alls plus the combine copy."""
    return 2.0 * a2a_time(n_bytes, comm) * (1.0 - comm.overlap_fraction) + comm.combine_cost
