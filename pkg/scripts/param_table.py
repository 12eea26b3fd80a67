"""Print per-layer parameter counts of the default model next to the published layer table."""

from tempcast import model as M


def main():
    params = M.build(M.ModelConfig())
    report = {r["layer"]: r for r in M.layer_table_report()}
    print(f"{'layer':<8} {'label':<22} {'computed':>10} {'published':>10}  note")
    for layer_id, label, n in M.count_params(params):
        row = report.get(layer_id, {})
        published = row.get("published", "")
        note = "match" if row.get("match") else row.get("implied", "")
        print(f"{layer_id:<8} {label:<22} {n:>10} {published:>10}  {note}")
    print(f"{'total':<8} {'':<22} {params.count:>10}")


if __name__ == "__main__":
    main()
