from typing import List, Optional, Sequence

from scaf.data.models import DeviceGroup
from scaf.errors import RangeError


def form_groups(j: int, n_devices: int, device_ids: Optional[Sequence[int]] = None) -> List[DeviceGroup]:
    """Consecutive, disjoint training groups of j devices.

    Group i holds devices k..k+j-1 with k = (i-1)*j + 1; trailing devices that
    do not fill a whole group are left out. ``device_ids`` maps positions
    1..n_devices to real ids (default: the positions themselves).
    """
    if not 1 <= j <= n_devices:
        raise RangeError(f"group size must be in [1, {n_devices}], got {j}")
    ids = list(device_ids) if device_ids is not None else list(range(1, n_devices + 1))
    if len(ids) != n_devices:
        raise RangeError(f"{len(ids)} device ids for {n_devices} devices")
    groups = []
    for i in range(1, n_devices // j + 1):
        k = (i - 1) * j + 1
        groups.append(DeviceGroup(index=i, members=ids[k - 1 : k - 1 + j]))
    return groups


def leave_one_out_groups(device_ids: Sequence[int]) -> List[DeviceGroup]:
    """Group i trains on every device except the i-th."""
    ids = list(device_ids)
    if len(ids) < 2:
        raise RangeError("leave-one-out needs at least 2 devices")
    return [
        DeviceGroup(index=i + 1, members=ids[:i] + ids[i + 1 :])
        for i in range(len(ids))
    ]
