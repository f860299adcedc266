"""Cut raw drive logs into a car-following event dataset.

Each raw log is a CSV with columns
t,lead_present,same_lane,delta_d,v1,cut_in,delta_v,a_x. Qualifying runs are
written as one CSV per event plus a manifest, ready for `drivestyle fit`.

Usage:
    # One driver, all logs in a directory
    uv run python scripts/extract_events.py logs/driver_07 --out data/driver_07

    # Override the extraction rules
    uv run python scripts/extract_events.py logs/driver_07 --out data/driver_07 --config rules.yaml
"""

import argparse
import logging
import sys
from pathlib import Path

from tqdm import tqdm

from drivestyle.config import load_settings
from drivestyle.dataio import DriverDataset, EventSeries, extract_events, load_raw_log, write_events
from drivestyle.errors import DriveStyleError

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)


def main() -> int:
    """Extract events from every raw log of one driver."""
    parser = argparse.ArgumentParser(description="Extract car-following events from raw drive logs")
    parser.add_argument("logs", help="Directory of raw log CSVs (one driver)")
    parser.add_argument("--out", required=True, help="Output event directory")
    parser.add_argument("--driver-id", help="Driver id (default: log directory name)")
    parser.add_argument("--config", help="YAML overrides for the extraction rules")
    args = parser.parse_args()

    logger.info("=" * 80)
    logger.info("Car-Following Event Extraction")
    logger.info("=" * 80)
    logger.info("")

    log_dir = Path(args.logs)
    if not log_dir.is_dir():
        logger.error(f"Log directory not found: {log_dir}")
        return 2
    logs = sorted(log_dir.glob("*.csv"))
    if not logs:
        logger.error(f"No raw log CSVs in {log_dir}")
        return 2

    rules = load_settings(Path(args.config) if args.config else None).extraction
    logger.info(
        f"Rules: range < {rules.max_range_m} m, speed > {rules.min_speed_mps} m/s, "
        f"duration > {rules.min_duration_s} s at {rules.rate_hz} Hz"
    )
    logger.info("")

    events: list[EventSeries] = []
    failed: list[str] = []
    for path in tqdm(logs, desc="Extracting", unit="log"):
        try:
            events.extend(extract_events(load_raw_log(path), rules, prefix=path.stem))
        except DriveStyleError as e:
            logger.error(f"Failed to extract {path.name}: {e}")
            failed.append(path.name)

    if not events:
        logger.error("No events satisfied the extraction rules")
        return 1

    dataset = DriverDataset(driver_id=args.driver_id or log_dir.name, events=tuple(events), rate_hz=rules.rate_hz)
    write_events(dataset, Path(args.out))

    total_s = sum(e.duration_s for e in events)
    logger.info("")
    logger.info("=" * 80)
    logger.info("Extraction Complete!")
    logger.info("=" * 80)
    logger.info(f"Logs: {len(logs)} ({len(failed)} failed)")
    logger.info(f"Events: {len(events)}")
    logger.info(f"Total duration: {total_s / 60:.1f} min")
    logger.info(f"Written to: {args.out}")
    for name in failed:
        logger.info(f"  - failed: {name}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
