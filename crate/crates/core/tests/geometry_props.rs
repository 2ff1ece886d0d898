use gazekit::fov::{cone2d_heatmap, fov_jacobian, fov_value, fov_values_raw, FOV_THRESHOLD};
use gazekit::geometry::{
    build_eye_frame, crop_intrinsics, project, to_eye_frame, unproject, unproject_pixel, CameraIntrinsics,
    CoordinateFrame, CropMode, CropRect, DepthMap, PointCloud, Vec3,
};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

fn intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
    (50.0f64..2000.0, 1usize..64, 1usize..64, -20.0f64..20.0, -20.0f64..20.0).prop_map(|(f, w, h, dx, dy)| {
        let k = CameraIntrinsics::new(f, w, h).unwrap();
        k.with_principal(k.principal_x + dx, k.principal_y + dy)
    })
}

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn eye_position() -> impl Strategy<Value = Vec3> {
    (-2.0f64..2.0, -2.0f64..2.0, 0.3f64..6.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (vec3(1.0), -3.1f64..3.1).prop_filter_map("non-zero axis", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle))
    })
}

fn eye_cloud(points: &[Vec3]) -> PointCloud {
    let n = points.len();
    PointCloud::from_pixel_points(
        n,
        1,
        CoordinateFrame::Eye,
        points.iter().enumerate().map(|(i, p)| ((i, 0), *p)),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn project_inverts_unproject(k in intrinsics(), fx in 0.0f64..1.0, fy in 0.0f64..1.0, z in 0.05f64..100.0) {
        let x = (fx * k.width as f64).floor();
        let y = (fy * k.height as f64).floor();
        let (u, v) = project(&unproject_pixel(x, y, z, &k), &k).unwrap();
        prop_assert!((u - x).abs() < 1e-9 && (v - y).abs() < 1e-9);
    }

    #[test]
    fn eye_basis_is_right_handed_orthonormal(eye in vec3(10.0).prop_filter("nonzero", |e| e.norm() > 1e-6)) {
        let f = build_eye_frame(&eye).unwrap();
        for (a, b) in [(f.ex, f.ey), (f.ey, f.ez), (f.ex, f.ez)] {
            prop_assert!(a.dot(&b).abs() < 1e-9);
        }
        for v in [f.ex, f.ey, f.ez] {
            prop_assert!((v.norm() - 1.0).abs() < 1e-9);
        }
        prop_assert!((f.ex.cross(&f.ey) - f.ez).norm() < 1e-9);
    }

    #[test]
    fn eye_frame_is_an_isometry(
        eye in eye_position(),
        depths in prop::collection::vec(0.1f64..20.0, 12),
        k in intrinsics().prop_filter("12 px", |k| k.width * k.height >= 12),
    ) {
        let mut values = vec![f64::NAN; k.width * k.height];
        values[..12].copy_from_slice(&depths);
        let cam = unproject(&DepthMap::from_values(k.width, k.height, values).unwrap(), &k).unwrap();
        let frame = build_eye_frame(&eye).unwrap();
        let eyec = to_eye_frame(&cam, &frame).unwrap();
        let (a, b) = (cam.points(), eyec.points());
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let (d0, d1) = ((a[i] - a[j]).norm(), (b[i] - b[j]).norm());
                prop_assert!((d0 - d1).abs() < 1e-9 * d0.max(1.0));
            }
            prop_assert!((frame.to_camera(&b[i]) - a[i]).norm() < 1e-9 * a[i].norm().max(1.0));
        }
    }

    #[test]
    fn points_behind_eye_on_camera_ray_sit_on_the_z_axis(eye in eye_position(), t in 1.0001f64..5.0) {
        let frame = build_eye_frame(&eye).unwrap();
        let p = frame.to_eye(&(eye * t));
        prop_assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
    }

    #[test]
    fn consistent_crop_preserves_3d_positions(
        k in intrinsics(),
        (cx, cy, cw, ch) in (0usize..8, 0usize..8, 1usize..8, 1usize..8),
        z in 0.1f64..50.0,
    ) {
        let crop = CropRect { x: cx.min(k.width - 1), y: cy.min(k.height - 1), width: cw, height: ch };
        let crop = CropRect {
            width: crop.width.min(k.width - crop.x),
            height: crop.height.min(k.height - crop.y),
            ..crop
        };
        let kc = crop_intrinsics(&k, &crop, CropMode::Consistent).unwrap();
        for ly in 0..crop.height {
            for lx in 0..crop.width {
                let full = unproject_pixel((crop.x + lx) as f64, (crop.y + ly) as f64, z, &k);
                let local = unproject_pixel(lx as f64, ly as f64, z, &kc);
                prop_assert!((full - local).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn fov_unchanged_by_joint_rotation(
        points in prop::collection::vec(vec3(5.0).prop_filter("off eye", |p| p.norm() > 1e-3), 1..20),
        gaze in vec3(1.0).prop_filter("nonzero", |g| g.norm() > 1e-3),
        r in rotation(),
    ) {
        let g = gaze.normalize();
        let rotated: Vec<Vec3> = points.iter().map(|p| r * p).collect();
        let a = fov_values_raw(&eye_cloud(&points), &g).unwrap();
        let b = fov_values_raw(&eye_cloud(&rotated), &(r * g)).unwrap();
        for (va, vb) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((va.unwrap() - vb.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn fov_jacobian_matches_central_differences(
        points in prop::collection::vec(vec3(5.0).prop_filter("off eye", |p| p.norm() > 1e-2), 1..16),
        gaze in vec3(1.0).prop_filter("nonzero", |g| g.norm() > 1e-2),
    ) {
        let g = gaze.normalize();
        let cloud = eye_cloud(&points);
        let jac = fov_jacobian(&cloud, &g).unwrap();
        let h = 1e-6;
        for (i, p) in points.iter().enumerate() {
            let c = g.dot(&p.normalize());
            // central differences straddling the kink are meaningless
            if (c - FOV_THRESHOLD).abs() < 1e-3 {
                continue;
            }
            let analytic = jac.as_slice()[i].unwrap();
            for axis in 0..3 {
                let mut e = Vec3::zeros();
                e[axis] = h;
                let plus = fov_values_raw(&cloud, &(g + e)).unwrap().as_slice()[i].unwrap();
                let minus = fov_values_raw(&cloud, &(g - e)).unwrap().as_slice()[i].unwrap();
                let numeric = (plus - minus) / (2.0 * h);
                let scale = analytic[axis].abs().max(numeric.abs()).max(1e-3);
                prop_assert!((analytic[axis] - numeric).abs() / scale < 1e-4, "{} vs {}", analytic[axis], numeric);
            }
        }
    }

    #[test]
    fn cone2d_invariant_to_uniform_rescaling(hx in 0usize..8, hy in 0usize..8, angle in -3.1f64..3.1, s in 2usize..4) {
        let g = (angle.cos(), angle.sin());
        let small = cone2d_heatmap((hx as f64, hy as f64), g, 8, 8).unwrap();
        let big = cone2d_heatmap(((hx * s) as f64, (hy * s) as f64), g, 8 * s, 8 * s).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let a = small.get(x, y).unwrap();
                let b = big.get(x * s, y * s).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fov_is_strictly_increasing_on_a_dense_grid() {
    let n = 200_000;
    let mut prev = fov_value(-1.0);
    for i in 1..=n {
        let c = -1.0 + 2.0 * i as f64 / n as f64;
        let v = fov_value(c);
        assert!(v > prev, "not increasing at c = {c}");
        assert!(v > 0.0 && v <= 1.0);
        prev = v;
    }
    assert_eq!(fov_value(1.0), 1.0);
}
