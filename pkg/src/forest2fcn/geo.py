"""Project detections onto map coordinates and match them to known signs.

All positions are WGS-84 degrees; headings are degrees clockwise from
north, normalized to [0, 360). Distances use a spherical earth of mean
radius 6 371 008.8 m, which is plenty below a hundred meters of sign
distance.
"""

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_008.8


@dataclass
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid coordinates ({self.lat}, {self.lon})")


@dataclass
class ImageGeo:
    position: GeoPoint
    heading: float          # degrees clockwise from north
    accuracy: float         # reported GPS inaccuracy, meters
    image_width: int        # pixels

    def __post_init__(self):
        self.heading = self.heading % 360.0


@dataclass
class CameraModel:
    focal_length: float     # millimeters
    sensor_width: float     # millimeters
    angle_of_view: float    # degrees

    def __post_init__(self):
        if self.focal_length <= 0 or self.sensor_width <= 0:
            raise ValueError("camera parameters must be positive")
        if not 0 < self.angle_of_view < 180:
            raise ValueError("angle of view must lie in (0, 180)")


@dataclass
class SignSpec:
    cls: int
    physical_width: float   # meters
    physical_height: float  # meters

    def __post_init__(self):
        if self.physical_width <= 0 or self.physical_height <= 0:
            raise ValueError("sign sizes must be positive")


@dataclass
class SignGeo:
    position: GeoPoint
    heading: float
    cls: int
    source_image: str | None = None
    accuracy: float | None = None

    def __post_init__(self):
        self.heading = self.heading % 360.0


def relative_heading(b_x, i_w, angle_of_view):
    """Signed angular offset of an image column from the view axis.

    Zero at the image center, negative to the left, +aov/2 at the right
    edge.
    """
    if not 0 <= b_x <= i_w:
        raise ValueError("box center must lie inside the image")
    return angle_of_view * (b_x / i_w - 0.5)


def estimate_distance(b_w, i_w, camera, physical_width):
    """Pinhole depth from the apparent pixel width of an object."""
    if b_w <= 0:
        raise ValueError("box width must be positive")
    return camera.focal_length * physical_width * i_w / (b_w * camera.sensor_width)


def destination_point(origin, bearing_deg, distance_m):
    """Spherical-earth destination from a start point, bearing and range."""
    if distance_m < 0:
        raise ValueError("distance must be nonnegative")
    if distance_m == 0:
        return GeoPoint(origin.lat, origin.lon)
    lat1 = math.radians(origin.lat)
    lon1 = math.radians(origin.lon)
    bearing = math.radians(bearing_deg)
    delta = distance_m / EARTH_RADIUS_M
    lat2 = math.asin(math.sin(lat1) * math.cos(delta)
                     + math.cos(lat1) * math.sin(delta) * math.cos(bearing))
    lon2 = lon1 + math.atan2(math.sin(bearing) * math.sin(delta) * math.cos(lat1),
                             math.cos(delta) - math.sin(lat1) * math.sin(lat2))
    lon2 = (lon2 + math.pi) % (2 * math.pi) - math.pi
    return GeoPoint(math.degrees(lat2), math.degrees(lon2))


def haversine(a, b):
    """Great-circle distance in meters between two points."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = math.radians(b.lat - a.lat)
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def heading_difference(a, b):
    """Circular absolute difference of two headings, in [0, 180]."""
    return abs((a - b + 180.0) % 360.0 - 180.0)


def project_sign(image, box, camera, spec):
    """Place one detected box on the map.

    Composes the in-image angular offset, the pinhole depth estimate and
    a spherical destination step from the image position.
    """
    if spec.cls != box.cls:
        raise ValueError(f"sign spec is for class {spec.cls}, box has class {box.cls}")
    delta_h = relative_heading(box.x, image.image_width, camera.angle_of_view)
    distance = estimate_distance(box.w, image.image_width, camera, spec.physical_width)
    heading = (image.heading + delta_h) % 360.0
    position = destination_point(image.position, heading, distance)
    return SignGeo(position=position, heading=heading, cls=box.cls,
                   accuracy=image.accuracy)


@dataclass
class MatchStats:
    matches: list           # (detection index, truth index, distance, heading_gap)
    unmatched: list         # detection indices with no valid candidate
    median_error: float
    filtered_median_error: float


def match_signs(detections, truth, accuracy_cutoff=3.95):
    """Assign each detection to the nearest same-class truth sign whose
    circular heading difference stays within the 90-degree viewing area.

    Matching is independent per detection (several detections may share a
    truth sign). The filtered median drops detections whose source GPS
    accuracy exceeds the cutoff.
    """
    matches, unmatched = [], []
    for i, det in enumerate(detections):
        best = None
        for j, t in enumerate(truth):
            if t.cls != det.cls:
                continue
            gap = heading_difference(det.heading, t.heading)
            if gap > 90.0:
                continue
            d = haversine(det.position, t.position)
            if best is None or d < best[2]:
                best = (i, j, d, gap)
        if best is None:
            unmatched.append(i)
        else:
            matches.append(best)
    errors = [m[2] for m in matches]
    filtered = [m[2] for m in matches
                if detections[m[0]].accuracy is None
                or detections[m[0]].accuracy <= accuracy_cutoff]
    return MatchStats(
        matches=matches,
        unmatched=unmatched,
        median_error=float(np.median(errors)) if errors else float("nan"),
        filtered_median_error=float(np.median(filtered)) if filtered else float("nan"),
    )
