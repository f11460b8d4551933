"""Plain-text result tables shared by the experiment scripts."""

from supcon_lab.metrics import POOLED_ORDER

HEAD = ["in_domain", "wild", "df", "la", "pooled"]


def fmt(x):
    return "-" if x is None else f"{x:6.2f}"


def print_rows(rows, key_cols):
    width = max(len(" / ".join(str(r[k]) for k in key_cols)) for r in rows) + 2
    print(f"{'':<{width}}" + " ".join(f"{h:>9}" for h in HEAD) + "   status")
    for r in rows:
        label = " / ".join(str(r[k]) for k in key_cols)
        vals = [r.get(f"eer_{k}") for k in POOLED_ORDER] + [r.get("pooled_eer")]
        print(f"{label:<{width}}" + " ".join(f"{fmt(v):>9}" for v in vals) + f"   {r['status']}")
