//! Forward rendering: Lambertian and unlit materials under one directional and
//! one ambient light, followed by tonemapping and the inverse sRGB encode.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{
    quantize_unchecked, srgb_decode_unchecked, srgb_encode_unchecked, Channel, ColorError,
    ColorTriplet,
};
use crate::cube::Tonemap;

/// Rendering constant measured for HDRP 14.
pub const DEFAULT_SCALE_CONSTANT: f64 = 0.822;

/// Construction tolerance on ‖v‖ for unit vectors built in-process.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("{what} is not a unit vector (norm {norm})")]
    NotUnit { what: &'static str, norm: f64 },
    #[error("{what} must be nonnegative and finite, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("scale constant must be positive and finite, got {0}")]
    ScaleConstant(f64),
    #[error("{what}: {source}")]
    Color {
        what: &'static str,
        #[source]
        source: ColorError,
    },
    #[error("tonemap output channel {channel} = {value} outside [0, 1]")]
    TonemapRange { channel: Channel, value: f64 },
}

fn color_err(what: &'static str) -> impl FnOnce(ColorError) -> SceneError {
    move |source| SceneError::Color { what, source }
}

fn check_unit_vector(
    what: &'static str,
    v: Vector3<f64>,
    tol: f64,
) -> Result<Vector3<f64>, SceneError> {
    let norm = v.norm();
    if norm.is_finite() && (norm - 1.0).abs() <= tol {
        Ok(v)
    } else {
        Err(SceneError::NotUnit { what, norm })
    }
}

fn check_nonneg(what: &'static str, value: f64) -> Result<f64, SceneError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(SceneError::Negative { what, value })
    }
}

/// Unit surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNormal(Vector3<f64>);

impl SurfaceNormal {
    pub fn new(n: Vector3<f64>) -> Result<Self, SceneError> {
        Self::with_tolerance(n, UNIT_TOLERANCE)
    }

    pub fn with_tolerance(n: Vector3<f64>, tol: f64) -> Result<Self, SceneError> {
        check_unit_vector("surface normal", n, tol).map(Self)
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLight {
    color: ColorTriplet,
    intensity: f64,
    direction: Vector3<f64>,
}

impl DirectionalLight {
    /// `direction` points from the surface toward the light.
    pub fn new(
        color: ColorTriplet,
        intensity: f64,
        direction: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        Self::with_tolerance(color, intensity, direction, UNIT_TOLERANCE)
    }

    pub fn with_tolerance(
        color: ColorTriplet,
        intensity: f64,
        direction: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, SceneError> {
        Ok(Self {
            color: color
                .ensure_unit("directional light color")
                .map_err(color_err("directional light"))?,
            intensity: check_nonneg("directional intensity", intensity)?,
            direction: check_unit_vector("light direction", direction, tol)?,
        })
    }

    pub fn color(&self) -> ColorTriplet {
        self.color
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientLight {
    color: ColorTriplet,
    intensity: f64,
}

impl AmbientLight {
    pub fn new(color: ColorTriplet, intensity: f64) -> Result<Self, SceneError> {
        color.try_map(|_, v| check_nonneg("ambient color", v))?;
        Ok(Self {
            color,
            intensity: check_nonneg("ambient intensity", intensity)?,
        })
    }

    pub fn color(&self) -> ColorTriplet {
        self.color
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertianMaterial {
    color: ColorTriplet,
}

impl LambertianMaterial {
    pub fn new(color: ColorTriplet) -> Result<Self, SceneError> {
        color
            .ensure_unit("material color")
            .map(|color| Self { color })
            .map_err(color_err("material"))
    }

    pub fn color(&self) -> ColorTriplet {
        self.color
    }
}

/// Exposure and the empirical rendering constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderContext {
    exposure: f64,
    scale: f64,
}

impl Default for RenderContext {
    fn default() -> Self {
        Self {
            exposure: 0.0,
            scale: DEFAULT_SCALE_CONSTANT,
        }
    }
}

impl RenderContext {
    pub fn new(exposure: f64, scale: f64) -> Result<Self, SceneError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(SceneError::ScaleConstant(scale));
        }
        if !exposure.is_finite() {
            return Err(SceneError::Negative {
                what: "exposure (finite)",
                value: exposure,
            });
        }
        Ok(Self { exposure, scale })
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Euler rotation of a directional light in degrees, as shown in the editor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LightRotation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Direction toward the light for the given rotation. The z rotation is
/// applied first and does not move the light axis, so it has no effect.
pub fn light_direction_from_rotation(rot: LightRotation) -> Vector3<f64> {
    let (sx, cx) = rot.x.to_radians().sin_cos();
    let (sy, cy) = rot.y.to_radians().sin_cos();
    Vector3::new(-cx * sy, sx, -cx * cy)
}

/// Unprocessed value `u` of a Lambertian surface.
///
/// `u_k = c · s(m_k) · (i_d · s(d_k) · max(l·n, 0) / π + i_a · a_k) / 2^e`
pub fn lambertian_unprocessed(
    material: &LambertianMaterial,
    normal: &SurfaceNormal,
    directional: &DirectionalLight,
    ambient: &AmbientLight,
    ctx: &RenderContext,
) -> ColorTriplet {
    let cos_theta = directional.direction.dot(&normal.0).max(0.0);
    let gain = ctx.scale / ctx.exposure.exp2();
    let direct = directional.intensity * cos_theta / std::f64::consts::PI;
    let m = material.color.map(srgb_decode_unchecked);
    let d = directional.color.map(srgb_decode_unchecked);
    let lit = d.zip_map(ambient.color, |dk, ak| direct * dk + ambient.intensity * ak);
    m.zip_map(lit, |mk, lk| gain * mk * lk)
}

/// Unprocessed value of an unlit material: `u_k = s(m_k)`.
pub fn unlit_unprocessed(m: ColorTriplet) -> Result<ColorTriplet, SceneError> {
    m.ensure_unit("unlit color")
        .map(|m| m.map(srgb_decode_unchecked))
        .map_err(color_err("unlit material"))
}

/// `v = s⁻¹(f(u))`.
pub fn post_process(u: ColorTriplet, tonemap: &Tonemap) -> Result<ColorTriplet, SceneError> {
    u.try_map(|_, v| check_nonneg("unprocessed value", v))?;
    let t = tonemap.apply(u);
    t.try_map(|channel, value| {
        if (0.0..=1.0).contains(&value) {
            Ok(srgb_encode_unchecked(value))
        } else {
            Err(SceneError::TonemapRange { channel, value })
        }
    })
}

/// Which material model produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Lambertian,
    Unlit,
}

impl std::fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaterialKind::Lambertian => "lambertian",
            MaterialKind::Unlit => "unlit",
        })
    }
}

impl std::str::FromStr for MaterialKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambertian" | "lambert" => Ok(MaterialKind::Lambertian),
            "unlit" => Ok(MaterialKind::Unlit),
            other => Err(format!("unknown material kind '{other}'")),
        }
    }
}

/// Everything needed to render one surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scene {
    Lambertian {
        material: LambertianMaterial,
        normal: SurfaceNormal,
        directional: DirectionalLight,
        ambient: AmbientLight,
        context: RenderContext,
    },
    Unlit {
        color: ColorTriplet,
    },
}

impl Scene {
    pub fn kind(&self) -> MaterialKind {
        match self {
            Scene::Lambertian { .. } => MaterialKind::Lambertian,
            Scene::Unlit { .. } => MaterialKind::Unlit,
        }
    }

    pub fn unprocessed(&self) -> Result<ColorTriplet, SceneError> {
        match self {
            Scene::Lambertian {
                material,
                normal,
                directional,
                ambient,
                context,
            } => Ok(lambertian_unprocessed(
                material,
                normal,
                directional,
                ambient,
                context,
            )),
            Scene::Unlit { color } => unlit_unprocessed(*color),
        }
    }
}

/// Full pipeline: unprocessed value, tonemap, inverse encode, and optional
/// 8-bit quantization of the result.
pub fn render(
    scene: &Scene,
    tonemap: &Tonemap,
    quantize: bool,
) -> Result<ColorTriplet, SceneError> {
    let v = post_process(scene.unprocessed()?, tonemap)?;
    Ok(if quantize {
        v.map(quantize_unchecked)
    } else {
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn z_up() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 1.0)
    }

    fn scene_parts(
        m: f64,
        i_d: f64,
        l: Vector3<f64>,
        a: f64,
        i_a: f64,
        e: f64,
    ) -> (
        LambertianMaterial,
        SurfaceNormal,
        DirectionalLight,
        AmbientLight,
        RenderContext,
    ) {
        (
            LambertianMaterial::new(ColorTriplet::splat(m)).unwrap(),
            SurfaceNormal::new(z_up()).unwrap(),
            DirectionalLight::new(ColorTriplet::ONE, i_d, l).unwrap(),
            AmbientLight::new(ColorTriplet::splat(a), i_a).unwrap(),
            RenderContext::new(e, DEFAULT_SCALE_CONSTANT).unwrap(),
        )
    }

    #[test]
    fn head_on_directional_light() {
        let (m, n, d, a, c) = scene_parts(1.0, PI, z_up(), 1.0, 0.0, 0.0);
        let u = lambertian_unprocessed(&m, &n, &d, &a, &c);
        for k in u.to_array() {
            assert_abs_diff_eq!(k, 0.822, epsilon = 1e-15);
        }
    }

    #[test]
    fn back_lit_surface_sees_only_ambient() {
        let (m, n, d, a, c) = scene_parts(1.0, 7.0, -z_up(), 1.0, 1.0, 0.0);
        let u = lambertian_unprocessed(&m, &n, &d, &a, &c);
        assert_eq!(u, ColorTriplet::splat(0.822));
    }

    #[test]
    fn black_material_renders_black() {
        let (m, n, d, a, c) = scene_parts(0.0, 2.0, z_up(), 1.0, 1.0, 0.0);
        assert_eq!(
            lambertian_unprocessed(&m, &n, &d, &a, &c),
            ColorTriplet::ZERO
        );
    }

    #[test]
    fn rejects_non_unit_vectors_and_bad_ranges() {
        assert!(SurfaceNormal::new(Vector3::new(0.0, 0.0, 0.9)).is_err());
        assert!(
            DirectionalLight::new(ColorTriplet::ONE, 1.0, Vector3::new(1.0, 1.0, 0.0)).is_err()
        );
        assert!(DirectionalLight::new(ColorTriplet::ONE, -1.0, z_up()).is_err());
        assert!(LambertianMaterial::new(ColorTriplet::new(0.5, 1.2, 0.0)).is_err());
        assert!(AmbientLight::new(ColorTriplet::new(3.0, 0.0, -0.1), 1.0).is_err());
        assert!(RenderContext::new(0.0, 0.0).is_err());
        assert!(unlit_unprocessed(ColorTriplet::splat(1.5)).is_err());
    }

    #[test]
    fn unlit_examples() {
        assert_eq!(
            unlit_unprocessed(ColorTriplet::ZERO).unwrap(),
            ColorTriplet::ZERO
        );
        assert_eq!(
            unlit_unprocessed(ColorTriplet::ONE).unwrap(),
            ColorTriplet::ONE
        );
        let u = unlit_unprocessed(ColorTriplet::splat(0.5)).unwrap();
        assert_abs_diff_eq!(u.r, 0.214_041_140_482_232_44, epsilon = 1e-12);
    }

    #[test]
    fn rotation_examples() {
        let cases = [
            ((0.0, 0.0), Vector3::new(0.0, 0.0, -1.0)),
            ((90.0, 0.0), Vector3::new(0.0, 1.0, 0.0)),
            ((0.0, 90.0), Vector3::new(-1.0, 0.0, 0.0)),
        ];
        for ((x, y), expected) in cases {
            let l = light_direction_from_rotation(LightRotation { x, y, z: 0.0 });
            assert!((l - expected).norm() < 1e-12, "{x},{y} -> {l:?}");
        }
    }

    #[test]
    fn post_process_identity_examples() {
        let id = Tonemap::Identity;
        assert_eq!(
            post_process(ColorTriplet::ZERO, &id).unwrap(),
            ColorTriplet::ZERO
        );
        assert_eq!(
            post_process(ColorTriplet::ONE, &id).unwrap(),
            ColorTriplet::ONE
        );
        assert!(post_process(ColorTriplet::new(-0.1, 0.0, 0.0), &id).is_err());
    }

    #[test]
    fn render_examples() {
        let unlit = Scene::Unlit {
            color: ColorTriplet::new(0.25, 0.5, 0.75),
        };
        let v = render(&unlit, &Tonemap::Identity, false).unwrap();
        for (got, want) in v.to_array().into_iter().zip([0.25, 0.5, 0.75]) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
        let dim = Scene::Unlit {
            color: ColorTriplet::splat(0.002),
        };
        assert_eq!(
            render(&dim, &Tonemap::Identity, true).unwrap(),
            ColorTriplet::splat(1.0 / 255.0)
        );

        let (material, normal, directional, ambient, context) =
            scene_parts(0.6, 1.3, z_up(), 0.4, 0.7, 0.0);
        let lit = Scene::Lambertian {
            material,
            normal,
            directional,
            ambient,
            context,
        };
        let composed = post_process(
            lambertian_unprocessed(&material, &normal, &directional, &ambient, &context),
            &Tonemap::Identity,
        )
        .unwrap();
        assert_eq!(render(&lit, &Tonemap::Identity, false).unwrap(), composed);
    }

    fn unit_from_angles(theta: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        )
    }

    proptest! {
        #[test]
        fn light_terms_are_additive_and_linear(
            m in 0.0f64..=1.0, d in 0.0f64..=1.0, a in 0.0f64..=3.0,
            i_d in 0.0f64..=4.0, i_a in 0.0f64..=4.0, e in -3.0f64..=3.0,
            theta in 0.0f64..PI, phi in 0.0f64..(2.0 * PI),
        ) {
            let mat = LambertianMaterial::new(ColorTriplet::splat(m)).unwrap();
            let n = SurfaceNormal::new(z_up()).unwrap();
            let l = unit_from_angles(theta, phi);
            let ctx = RenderContext::new(e, DEFAULT_SCALE_CONSTANT).unwrap();
            let amb = |k: f64| AmbientLight::new(ColorTriplet::splat(a), k).unwrap();
            let dir = |k: f64| DirectionalLight::new(ColorTriplet::splat(d), k, l).unwrap();
            let both = lambertian_unprocessed(&mat, &n, &dir(i_d), &amb(i_a), &ctx);
            let only_d = lambertian_unprocessed(&mat, &n, &dir(i_d), &amb(0.0), &ctx);
            let only_a = lambertian_unprocessed(&mat, &n, &dir(0.0), &amb(i_a), &ctx);
            prop_assert!(((only_d + only_a).r - both.r).abs() <= 1e-12 * (1.0 + both.r));
            let double_d = lambertian_unprocessed(&mat, &n, &dir(2.0 * i_d), &amb(0.0), &ctx);
            let double_a = lambertian_unprocessed(&mat, &n, &dir(0.0), &amb(2.0 * i_a), &ctx);
            prop_assert!((double_d.r - 2.0 * only_d.r).abs() <= 1e-12 * (1.0 + only_d.r));
            prop_assert!((double_a.r - 2.0 * only_a.r).abs() <= 1e-12 * (1.0 + only_a.r));

            let ctx0 = RenderContext::new(0.0, DEFAULT_SCALE_CONSTANT).unwrap();
            let base = lambertian_unprocessed(&mat, &n, &dir(i_d), &amb(i_a), &ctx0);
            prop_assert!((both.r - base.r / e.exp2()).abs() <= 1e-12 * (1.0 + base.r));
        }

        #[test]
        fn invariant_under_rotation_preserving_cosine(
            theta in 0.0f64..PI, phi in 0.0f64..(2.0 * PI), spin in 0.0f64..(2.0 * PI),
        ) {
            let mat = LambertianMaterial::new(ColorTriplet::new(0.3, 0.6, 0.9)).unwrap();
            let amb = AmbientLight::new(ColorTriplet::splat(0.2), 0.5).unwrap();
            let ctx = RenderContext::default();
            let n0 = z_up();
            let l0 = unit_from_angles(theta, phi);
            let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), spin);
            let u0 = lambertian_unprocessed(&mat, &SurfaceNormal::new(n0).unwrap(),
                &DirectionalLight::new(ColorTriplet::ONE, 1.5, l0).unwrap(), &amb, &ctx);
            let u1 = lambertian_unprocessed(&mat, &SurfaceNormal::new(rot * n0).unwrap(),
                &DirectionalLight::new(ColorTriplet::ONE, 1.5, rot * l0).unwrap(), &amb, &ctx);
            prop_assert!((u0 - u1).max_component().abs() < 1e-12);
        }

        #[test]
        fn rotation_gives_unit_vector_independent_of_z(
            x in -720.0f64..720.0, y in -720.0f64..720.0, z1 in -720.0f64..720.0, z2 in -720.0f64..720.0,
        ) {
            let a = light_direction_from_rotation(LightRotation { x, y, z: z1 });
            let b = light_direction_from_rotation(LightRotation { x, y, z: z2 });
            prop_assert_eq!(a, b);
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn unlit_round_trips_through_identity(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let m = ColorTriplet::new(r, g, b);
            let v = render(&Scene::Unlit { color: m }, &Tonemap::Identity, false).unwrap();
            prop_assert!((v - m).max_component().abs() < 1e-12);
            prop_assert!((v - m).min_component().abs() < 1e-12);
        }
    }
}
