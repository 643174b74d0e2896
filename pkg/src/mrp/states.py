"""State index table: 1..51, alphabetical by name with DC included."""

STATE_CODES = (
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "DC", "FL",
    "GA", "HI", "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME",
    "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH",
    "NJ", "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA", "RI",
    "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI",
    "WY",
)

N_STATES = len(STATE_CODES)

# 1-based indices
DC = STATE_CODES.index("DC") + 1
ALASKA = STATE_CODES.index("AK") + 1
HAWAII = STATE_CODES.index("HI") + 1

STATE_FILTERS = {
    "all": tuple(range(1, N_STATES + 1)),
    "states-50": tuple(s for s in range(1, N_STATES + 1) if s != DC),
    "contiguous-48": tuple(
        s for s in range(1, N_STATES + 1) if s not in (DC, ALASKA, HAWAII)
    ),
}


def state_code(index):
    return STATE_CODES[index - 1]


def states_for_filter(name):
    try:
        return STATE_FILTERS[name]
    except KeyError:
        raise ValueError(
            f"unknown state filter {name!r}; expected one of {sorted(STATE_FILTERS)}"
        ) from None
