# report_utils.py
from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas
from datetime import datetime
import os

import pytz

from app_utils import load_latest_csv

ROWS_PER_PAGE = 38


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def generate_summary_pdf(report_dir, tz_name="UTC", filename=None):
    """summary.pdf for the latest report CSV of ``report_dir``; None when there is none."""
    df = load_latest_csv(report_dir)
    if df is None:
        return None
    filename = filename or os.path.join(report_dir, "summary.pdf")
    os.makedirs(os.path.dirname(filename) or ".", exist_ok=True)

    c = canvas.Canvas(filename, pagesize=A4)
    w, h = A4

    c.setFont("Helvetica-Bold", 16)
    c.drawString(50, h - 55, "INCIDENCE LAB REPORT")

    c.setFont("Helvetica", 11)
    stamp = datetime.now(pytz.timezone(tz_name)).strftime("%Y-%m-%d %H:%M %Z")
    c.drawString(50, h - 80, f"Generated: {stamp}")
    counts = df["verdict"].value_counts()
    summary = ", ".join(f"{k}: {int(v)}" for k, v in counts.sort_index().items())
    c.drawString(50, h - 98, f"Rows: {len(df)}  ({summary})")

    y = h - 130
    c.setFont("Helvetica-Bold", 10)
    c.drawString(50, y, "name | n | k | lambda | lhs | rhs | ratio | verdict")
    y -= 18

    c.setFont("Helvetica", 9)
    for i, (_, r) in enumerate(df.iterrows()):
        if i and i % ROWS_PER_PAGE == 0:
            c.showPage()
            c.setFont("Helvetica", 9)
            y = h - 60
        c.drawString(
            50,
            y,
            " | ".join(_fmt(r[col]) for col in ("name", "n", "k", "lambda", "lhs", "rhs", "ratio", "verdict"))
        )
        y -= 16

    c.setFont("Helvetica-Oblique", 9)
    c.drawString(
        50,
        40,
        "Desk-scale measurements; verdicts compare against bounds with the configured slack."
    )

    c.save()
    return filename
