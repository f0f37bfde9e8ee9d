"""
Dropout audit of an episode.

Scans the mask records in timestamp order. A dropout interval of a
modality starts at the first record with its bit clear and ends at the
next record with the bit set (or at the last record). Usable segments are
the spans where every required modality is present.
"""

import logging
from typing import Callable, List, Optional, Sequence, Union

from src.core.mask import PhysicalMask
from src.recorder.container import Episode, read_episode
from src.schemas.episode import AuditReport, DropoutInterval, ModalityAudit

logger = logging.getLogger(__name__)


def _spans(
    masks: Sequence[PhysicalMask], predicate: Callable[[PhysicalMask], bool]
) -> List[DropoutInterval]:
    spans: List[DropoutInterval] = []
    start: Optional[int] = None
    for mask in masks:
        if predicate(mask):
            if start is None:
                start = mask.timestamp_ns
        elif start is not None:
            spans.append(DropoutInterval(start_ns=start, end_ns=mask.timestamp_ns))
            start = None
    if start is not None and masks:
        spans.append(DropoutInterval(start_ns=start, end_ns=masks[-1].timestamp_ns))
    return spans


def audit_episode(episode: Episode, require: Sequence[str] = ()) -> AuditReport:
    """
    Build the dropout report of a decoded episode.

    Args:
        episode: Decoded episode
        require: Modality names that must all be present in a usable segment

    Returns:
        AuditReport

    Raises:
        ValueError: A required modality is not in the episode's bit map
    """
    bit_map = episode.manifest.bit_map
    unknown = [name for name in require if name not in bit_map]
    if unknown:
        raise ValueError(f"unknown modalities: {', '.join(unknown)}")

    masks = sorted(episode.mask_records(), key=lambda m: m.timestamp_ns)
    counts = episode.counts()
    report = AuditReport(
        episode=episode.path,
        start_ns=masks[0].timestamp_ns if masks else 0,
        end_ns=masks[-1].timestamp_ns if masks else 0,
        mask_records=len(masks),
        required=list(require),
        damage_offset=episode.damage_offset,
    )

    for name, bit in bit_map.items():
        entry = episode.manifest.by_name(name)
        report.modalities.append(
            ModalityAudit(
                name=name,
                bit=bit,
                intervals=_spans(masks, lambda m, b=bit: not m.is_set(b)),
                data_records=counts.get(entry.id, 0) if entry is not None else 0,
            )
        )

    required_bits = [bit_map[name] for name in require]
    report.usable_segments = _spans(masks, lambda m: all(m.is_set(b) for b in required_bits))

    dropped = [m.name for m in report.modalities if m.intervals]
    logger.info(
        f"Audited {episode.path}: {len(masks)} mask records, dropouts in {dropped or 'none'}"
    )
    return report


def audit(
    source: Union[str, Episode], require: Sequence[str] = (), strict: bool = True
) -> AuditReport:
    """
    Audit an episode file.

    Raises:
        CorruptContainer: Damaged file (strict mode)
        ValueError: Unknown required modality
    """
    episode = read_episode(source, strict=strict) if isinstance(source, str) else source
    return audit_episode(episode, require)
