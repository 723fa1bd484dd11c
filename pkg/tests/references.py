"""Deliberately naive cache models used as oracles by the simulator tests."""


def reference_lru(seq, capacity):
    """List-based LRU: index 0 is least recent."""
    stack, hits = [], []
    for b in seq:
        if b in stack:
            stack.remove(b)
            stack.append(b)
            hits.append(True)
            continue
        if len(stack) == capacity:
            stack.pop(0)
        stack.append(b)
        hits.append(False)
    return hits


def reference_lfu(seq, capacity):
    """Linear-scan LFU with lifetime counts; ties go to the least recent block."""
    freq, last, resident, hits = {}, {}, [], []
    for step, b in enumerate(seq):
        freq[b] = freq.get(b, 0) + 1
        if b in resident:
            hits.append(True)
        else:
            hits.append(False)
            if len(resident) == capacity:
                victim = resident[0]
                for r in resident[1:]:
                    if freq[r] < freq[victim] or (freq[r] == freq[victim] and last[r] < last[victim]):
                        victim = r
                resident.remove(victim)
            resident.append(b)
        last[b] = step
    return hits
