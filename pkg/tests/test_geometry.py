"""场景几何：全景/卫星光线、归一化映射"""
import math

import pytest
import torch
from hypothesis import assume, given, settings, strategies as st

from geometry.cameras import (
    PanoramaCamera,
    SatelliteOrthoCamera,
    WorldFrame,
    frame_from_config,
    panorama_azimuth,
    panorama_elevation,
    panorama_rays,
    satellite_camera_from_config,
    satellite_rays,
    world_to_normalized,
)
from utils.errors import InvalidCameraError, InvalidRangeError


def make_frame(half=8.0, z_min=-2.0, z_max=14.0, camera_height=2.0):
    return WorldFrame(box_min=(-half, -half, z_min), box_max=(half, half, z_max), camera_height=camera_height)


class TestWorldFrame:
    def test_rejects_non_positive_extent(self):
        with pytest.raises(InvalidCameraError):
            WorldFrame(box_min=(0, 0, 0), box_max=(0, 1, 1), camera_height=0.5)

    def test_rejects_camera_outside_vertical_range(self):
        with pytest.raises(InvalidCameraError):
            WorldFrame(box_min=(-1, -1, 0), box_max=(1, 1, 2), camera_height=2.0)

    def test_frame_from_config_centers_box(self, config):
        frame = frame_from_config(config)
        assert frame.center[:2] == (0.0, 0.0)
        assert frame.extent[0] == config['scene']['sat_size'] * config['scene']['gsd']


class TestPanoramaRays:
    def test_center_column_points_north(self):
        assert float(panorama_azimuth(torch.tensor(127.5, dtype=torch.float64), 256)) == pytest.approx(0.0, abs=1e-12)
        cam = PanoramaCamera(position=(0.0, 0.0, 2.0), width=256, height=64)
        rays = panorama_rays(cam, make_frame(), n_samples=4, dtype=torch.float64)
        # 第 0 行俯仰角非零，只看水平分量的方向
        d = rays.directions.reshape(64, 256, 3)
        east_of_north = d[:, 128, 0] / d[:, 128, 1]
        west_of_north = d[:, 127, 0] / d[:, 127, 1]
        assert torch.all(d[:, 127:129, 1] > 0)
        torch.testing.assert_close(east_of_north, -west_of_north)

    def test_horizontal_north_direction(self):
        theta = panorama_azimuth(torch.tensor(127.5, dtype=torch.float64), 256)
        phi = torch.tensor(0.0, dtype=torch.float64)
        direction = torch.stack([torch.sin(theta) * torch.cos(phi), torch.cos(theta) * torch.cos(phi), torch.sin(phi)])
        torch.testing.assert_close(direction, torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64))

    def test_first_column_azimuth(self):
        theta = float(panorama_azimuth(torch.tensor(0.0, dtype=torch.float64), 256))
        assert theta == pytest.approx(-math.pi + math.pi / 256, abs=1e-12)

    def test_unit_directions(self):
        cam = PanoramaCamera(position=(1.0, -2.0, 2.0), heading_offset=0.3, width=32, height=8)
        rays = panorama_rays(cam, make_frame(), n_samples=8)
        norms = rays.directions.norm(dim=-1)
        torch.testing.assert_close(norms, torch.ones_like(norms), atol=1e-6, rtol=0)

    def test_elevation_rows_top_to_bottom(self):
        rows = torch.arange(8, dtype=torch.float64)
        phi = panorama_elevation(rows, 8, (-math.pi / 4, math.pi / 4))
        assert torch.all(phi[1:] < phi[:-1])
        assert float(phi[0]) == pytest.approx(math.pi / 4 - (0.5 / 8) * (math.pi / 2))

    def test_tan_mapping_is_monotone(self):
        rows = torch.arange(8, dtype=torch.float64)
        phi = panorama_elevation(rows, 8, (-math.pi / 4, math.pi / 4), mapping='tan')
        assert torch.all(phi[1:] < phi[:-1])
        torch.testing.assert_close(phi, -phi.flip(0))

    def test_uniform_quadrature(self):
        cam = PanoramaCamera(position=(0.0, 0.0, 2.0), width=16, height=4)
        rays = panorama_rays(cam, make_frame(), n_samples=6, t_near=0.5, t_far=6.5, dtype=torch.float64)
        assert torch.all(rays.sample_t[:, 1:] > rays.sample_t[:, :-1])
        torch.testing.assert_close(rays.deltas[:, :-1], rays.sample_t[:, 1:] - rays.sample_t[:, :-1])
        torch.testing.assert_close(rays.deltas.sum(dim=1), torch.full((64,), 6.0, dtype=torch.float64))

    def test_jittered_samples_stay_ordered(self):
        cam = PanoramaCamera(position=(0.0, 0.0, 2.0), width=16, height=4)
        gen = torch.Generator().manual_seed(0)
        rays = panorama_rays(cam, make_frame(), n_samples=8, generator=gen, dtype=torch.float64)
        assert torch.all(rays.deltas > 0)
        torch.testing.assert_close(rays.deltas[:, :-1], rays.sample_t[:, 1:] - rays.sample_t[:, :-1])

    def test_default_t_far_is_box_diagonal(self):
        frame = make_frame()
        cam = PanoramaCamera(position=(0.0, 0.0, 2.0), width=16, height=4)
        rays = panorama_rays(cam, frame, n_samples=4)
        assert rays.t_far == pytest.approx(frame.diagonal)

    @pytest.mark.parametrize('t_near, t_far', [(1.0, 1.0), (2.0, 1.0), (0.0, 5.0)])
    def test_rejects_bad_interval(self, t_near, t_far):
        cam = PanoramaCamera(position=(0.0, 0.0, 2.0), width=16, height=4)
        with pytest.raises(InvalidRangeError):
            panorama_rays(cam, make_frame(), n_samples=4, t_near=t_near, t_far=t_far)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(InvalidCameraError):
            PanoramaCamera(position=(0.0, 0.0, 2.0), width=0, height=4)

    @settings(max_examples=30, deadline=None)
    @given(width=st.integers(min_value=2, max_value=512), u=st.integers(min_value=0, max_value=511))
    def test_azimuth_symmetry_and_period(self, width, u):
        u = u % width
        cols = torch.tensor([float(u), float(width - 1 - u), float(u + width)], dtype=torch.float64)
        theta = panorama_azimuth(cols, width)
        assert float(theta[0]) == pytest.approx(-float(theta[1]), abs=1e-12)
        assert float(theta[2] - theta[0]) == pytest.approx(2 * math.pi, abs=1e-12)


class TestSatelliteRays:
    def test_two_by_two_grid(self):
        frame = WorldFrame(box_min=(-1.0, -1.0, -1.0), box_max=(1.0, 1.0, 3.0), camera_height=1.0)
        cam = SatelliteOrthoCamera(ground_sample_distance=1.0, width=2, height=2, altitude=3.0)
        rays = satellite_rays(cam, frame, n_samples=4, dtype=torch.float64)
        expected = torch.tensor([
            [-0.5, 0.5, 3.0], [0.5, 0.5, 3.0],     # 第0行为北
            [-0.5, -0.5, 3.0], [0.5, -0.5, 3.0],
        ], dtype=torch.float64)
        torch.testing.assert_close(rays.origins, expected)
        assert rays.n_rays == 4

    def test_nadir_and_span(self):
        frame = make_frame()
        cam = SatelliteOrthoCamera(ground_sample_distance=1.0, width=16, height=16, altitude=14.0)
        rays = satellite_rays(cam, frame, n_samples=8, dtype=torch.float64)
        assert torch.all(rays.directions == torch.tensor([0.0, 0.0, -1.0], dtype=torch.float64))
        torch.testing.assert_close(rays.deltas, torch.full_like(rays.deltas, 2.0))
        torch.testing.assert_close(rays.deltas.sum(dim=1), torch.full((256,), 16.0, dtype=torch.float64))

    def test_altitude_shift_moves_origins_only_vertically(self):
        frame = make_frame()
        low = satellite_rays(SatelliteOrthoCamera(1.0, 8, 8, 14.0), frame, 4, dtype=torch.float64)
        high = satellite_rays(SatelliteOrthoCamera(1.0, 8, 8, 20.0), frame, 4, dtype=torch.float64)
        torch.testing.assert_close(low.origins[:, :2], high.origins[:, :2])
        torch.testing.assert_close(high.origins[:, 2] - low.origins[:, 2], torch.full((64,), 6.0, dtype=torch.float64))
        torch.testing.assert_close(low.directions, high.directions)
        # 采样点在世界坐标中重合
        torch.testing.assert_close(low.points(), high.points())

    def test_rejects_oversized_footprint(self):
        with pytest.raises(InvalidCameraError):
            satellite_rays(SatelliteOrthoCamera(1.0, 32, 32, 14.0), make_frame(), 4)

    def test_rejects_low_altitude(self):
        with pytest.raises(InvalidCameraError):
            satellite_rays(SatelliteOrthoCamera(1.0, 8, 8, 10.0), make_frame(), 4)

    def test_window_matches_full_grid(self):
        frame = make_frame()
        cam = SatelliteOrthoCamera(1.0, 16, 16, 14.0)
        full = satellite_rays(cam, frame, 4, dtype=torch.float64)
        part = satellite_rays(cam, frame, 4, window=(2, 3, 4, 5), dtype=torch.float64)
        grid = full.origins.reshape(16, 16, 3)[2:6, 3:8].reshape(-1, 3)
        torch.testing.assert_close(part.origins, grid)
        assert (part.height, part.width) == (4, 5)

    def test_window_out_of_bounds(self):
        with pytest.raises(InvalidRangeError):
            satellite_rays(SatelliteOrthoCamera(1.0, 8, 8, 14.0), make_frame(), 4, window=(6, 0, 4, 4))

    def test_downscaled_keeps_footprint(self, config):
        frame = frame_from_config(config)
        cam = satellite_camera_from_config(config, frame)
        small = cam.downscaled(4)
        assert small.width * small.ground_sample_distance == cam.width * cam.ground_sample_distance


class TestWorldToNormalized:
    def test_center_and_corners(self):
        frame = make_frame()
        pts = torch.tensor([list(frame.center), list(frame.box_max)], dtype=torch.float64)
        normalized, outside = world_to_normalized(pts, frame)
        torch.testing.assert_close(normalized, torch.tensor([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], dtype=torch.float64))
        assert not bool(outside.any())

    def test_extrapolation_is_flagged(self):
        frame = make_frame()
        lo = torch.tensor(frame.box_min, dtype=torch.float64)
        extent = torch.tensor(frame.extent, dtype=torch.float64)
        normalized, outside = world_to_normalized((lo - extent).unsqueeze(0), frame)
        torch.testing.assert_close(normalized, torch.full((1, 3), -3.0, dtype=torch.float64))
        assert bool(outside[0])

    @settings(max_examples=50, deadline=None)
    @given(st.tuples(*[st.floats(min_value=-50, max_value=50, allow_nan=False)] * 3))
    def test_flag_matches_box_membership(self, point):
        frame = make_frame()
        assume(all(abs(c - b) > 1e-9 for c in point for b in frame.box_min + frame.box_max))
        p = torch.tensor([point], dtype=torch.float64)
        _, outside = world_to_normalized(p, frame)
        inside = all(lo <= c <= hi for lo, c, hi in zip(frame.box_min, point, frame.box_max))
        assert bool(outside[0]) == (not inside)
