"""Builds a benchmark manifest with the published per-cell cardinalities.

Within each in-distribution split, 8 images carry both many-attribute and
shared-attribute expressions, which is what makes the split-level distinct
image totals (196 validation, 215 test) smaller than the per-cell sums.
"""

# (type, domain, split, attribute, images, expressions, image index range)
CELLS = (
    ("Wildseg-ID", "MSCOCO", "validation", "Many Attribute", 100, 138, (0, 100)),
    ("Wildseg-ID", "MSCOCO", "validation", "Shared Attribute", 104, 127, (92, 196)),
    ("Wildseg-ID", "MSCOCO", "test", "Many Attribute", 108, 133, (0, 108)),
    ("Wildseg-ID", "MSCOCO", "test", "Shared Attribute", 115, 124, (100, 215)),
    ("Wildseg-DS", "CrowdHuman", "test", "Many Attribute", 101, 212, (0, 101)),
    ("Wildseg-DS", "Cityscapes", "test", "Shared Attribute", 105, 120, (0, 105)),
    ("Wildseg-DS", "Armbench", "test", "Shared Attribute", 107, 120, (0, 107)),
)

SPLIT_TOTALS = {
    ("Wildseg-ID", "validation"): (196, 265),
    ("Wildseg-ID", "test"): (215, 257),
}

GRAND_TOTALS = (724, 974)


def build_rows():
    rows = []
    for btype, domain, split, attribute, images, expressions, (lo, hi) in CELLS:
        assert hi - lo == images
        refs = [f"{btype}/{domain}/{split}/img{idx:04d}" for idx in range(lo, hi)]
        for k in range(expressions):
            rows.append(
                {
                    "type": btype,
                    "domain": domain,
                    "split": split,
                    "attribute": attribute,
                    "image_ref": refs[k % images],
                    "expression": f"{attribute} expression {k} for {domain} {split}",
                }
            )
    return rows
