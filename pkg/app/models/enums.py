from enum import Enum


class Objective(str, Enum):
    CORRECTED = "corrected"
    PRINTED = "printed"


class AllocationPolicy(str, Enum):
    AUTO = "auto"
    OPTIMIZED = "optimized"
    EVEN_SPLIT = "even_split"


class PartitionMode(str, Enum):
    IID_UNIFORM = "iid_uniform"
    MODE_SKEW = "mode_skew"


class SweepParameter(str, Enum):
    T_MAX = "t_max"
    DISTANCE = "distance"
