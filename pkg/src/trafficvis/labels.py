"""Label and family vocabularies shared by the dataset, model and metrics code."""
from .errors import InvalidLabel

BENIGN = "benign"
MALICIOUS = "malicious"
LABELS = (BENIGN, MALICIOUS)

MALWARE_FAMILIES = ("trojan", "ddos", "botnet", "os_scan", "keylogger", "backdoor")
FAMILIES = MALWARE_FAMILIES + ("unknown", "benign")


def label_index(label) -> int:
    """0 for benign, 1 for malicious. Integers 0/1 pass through."""
    if label in (0, 1) and not isinstance(label, str):
        return int(label)
    try:
        return LABELS.index(label)
    except ValueError:
        raise InvalidLabel(f"label must be one of {LABELS}, got {label!r}") from None


def label_name(index) -> str:
    return LABELS[label_index(index)]
