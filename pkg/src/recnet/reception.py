"""Per-client reception: the LIFO message buffer and filter-guided merging."""

from __future__ import annotations

from dataclasses import replace

from .backends.base import PromptBackend
from .directives import apply_rule_directives
from .model import ClientAgent, FilterMemory, MessageBuffer, PropagatedMessage

__all__ = ["apply_rule_directives", "buffer_push", "flush_and_merge"]


def buffer_push(buffer: MessageBuffer, msg: PropagatedMessage) -> MessageBuffer:
    """Prepend ``msg`` with the next local sequence number; evict the oldest on overflow."""
    stamped = replace(msg, seq=buffer.next_seq)
    entries = (stamped,) + buffer.entries
    return MessageBuffer(buffer.capacity, entries[: buffer.capacity], buffer.next_seq + 1)


def flush_and_merge(
    client: ClientAgent,
    backend: PromptBackend,
    *,
    force: bool = False,
    use_filter: bool = True,
) -> tuple[str, ClientAgent]:
    """Fuse buffered messages into the client's profile.

    Returns ``(merged_profile, client_with_empty_buffer)``. The stored profile
    is left alone; only the buffer is consumed. With an empty buffer nothing
    is sent to the backend unless ``force`` is set (the interaction step always
    runs the merge prompt). If the backend raises, the caller still holds the
    original client, so a retry sees the same buffer.
    """
    if not client.buffer.entries and not force:
        return client.profile, client
    filt = client.filter_memory if use_filter else FilterMemory(max_rules=client.filter_memory.max_rules)
    merged = backend.merge(client.buffer.entries, filt, client.profile)
    cleared = MessageBuffer(client.buffer.capacity, (), client.buffer.next_seq)
    return merged, replace(client, buffer=cleared)
