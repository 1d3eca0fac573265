//! Drives the C ABI end to end from Rust: grid construction, rendering,
//! backward gradients, refinement and image IO through the exported
//! functions only.

use std::ffi::{CStr, CString};

use tetdvr_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn full_ffi_pipeline() {
    unsafe {
        // Grid.
        let dims = [4u32, 4, 4];
        let bbox = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let color = [0.6, 0.4, 0.2];
        let mut mesh: *mut TdvrMesh = std::ptr::null_mut();
        assert_eq!(
            tdvr_mesh_grid(dims.as_ptr(), bbox.as_ptr(), color.as_ptr(), 0.8, &mut mesh),
            TdvrStatus::Ok
        );
        assert_eq!(tdvr_mesh_num_tets(mesh), 384);
        assert_eq!(tdvr_mesh_num_vertices(mesh), 125);
        assert_eq!(tdvr_mesh_validate(mesh), 0);

        // Round trip through the container format.
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = c(dir.path().join("m.tet").to_str().unwrap());
        assert_eq!(tdvr_mesh_save(mesh, mesh_path.as_ptr()), TdvrStatus::Ok);
        let mut loaded: *mut TdvrMesh = std::ptr::null_mut();
        assert_eq!(tdvr_mesh_load(mesh_path.as_ptr(), &mut loaded), TdvrStatus::Ok);
        assert_eq!(tdvr_mesh_num_tets(loaded), 384);
        tdvr_mesh_free(loaded);

        // Vertex access.
        let n = tdvr_mesh_num_vertices(mesh);
        let mut colors = vec![0.0; n * 3];
        assert_eq!(
            tdvr_mesh_get_vertices(mesh, std::ptr::null_mut(), colors.as_mut_ptr(), std::ptr::null_mut()),
            TdvrStatus::Ok
        );
        assert_eq!(colors[0], 0.6);
        for v in colors.iter_mut() {
            *v *= 0.5;
        }
        assert_eq!(
            tdvr_mesh_set_vertices(mesh, std::ptr::null(), colors.as_ptr(), std::ptr::null()),
            TdvrStatus::Ok
        );

        // Camera + render.
        let eye = [0.5, -2.4, 0.9];
        let target = [0.5, 0.5, 0.5];
        let up = [0.0, 0.0, 1.0];
        let mut camera: *mut TdvrCamera = std::ptr::null_mut();
        assert_eq!(
            tdvr_camera_look_at(
                eye.as_ptr(),
                target.as_ptr(),
                up.as_ptr(),
                0.8,
                32,
                32,
                0.05,
                20.0,
                &mut camera
            ),
            TdvrStatus::Ok
        );
        let mut image: *mut TdvrImage = std::ptr::null_mut();
        assert_eq!(
            tdvr_render(mesh, camera, 4, std::ptr::null(), &mut image),
            TdvrStatus::Ok
        );
        assert_eq!(tdvr_image_width(image), 32);
        let mut pixels = vec![0.0; 32 * 32 * 4];
        assert_eq!(tdvr_image_copy_data(image, pixels.as_mut_ptr()), TdvrStatus::Ok);
        assert!(pixels.iter().any(|v| *v > 0.0));

        // Image IO round trip.
        let img_path = c(dir.path().join("img.pf64").to_str().unwrap());
        assert_eq!(tdvr_image_write(image, img_path.as_ptr()), TdvrStatus::Ok);
        let mut re_read: *mut TdvrImage = std::ptr::null_mut();
        assert_eq!(tdvr_image_read(img_path.as_ptr(), &mut re_read), TdvrStatus::Ok);
        let mut back = vec![0.0; 32 * 32 * 4];
        assert_eq!(tdvr_image_copy_data(re_read, back.as_mut_ptr()), TdvrStatus::Ok);
        assert_eq!(pixels, back);
        let mut value = -1.0;
        assert_eq!(tdvr_psnr(image, re_read, 1.0, &mut value), TdvrStatus::Ok);
        assert!(value.is_infinite());

        // Target: perturbed copy; gradients must flow.
        for px in pixels.chunks_exact_mut(4) {
            px[0] = (px[0] + 0.25).min(1.0);
        }
        let mut target_img: *mut TdvrImage = std::ptr::null_mut();
        assert_eq!(
            tdvr_image_from_data(32, 32, pixels.as_ptr(), &mut target_img),
            TdvrStatus::Ok
        );
        let mut loss = 0.0;
        let mut grads: *mut TdvrGradients = std::ptr::null_mut();
        assert_eq!(
            tdvr_render_backward(
                mesh,
                camera,
                target_img,
                4,
                std::ptr::null(),
                2,
                &mut loss,
                &mut grads
            ),
            TdvrStatus::Ok
        );
        assert!(loss > 0.0);
        assert_eq!(tdvr_gradients_len(grads), n);
        let mut magnitude = vec![0.0; n];
        assert_eq!(
            tdvr_gradients_copy(
                grads,
                std::ptr::null_mut(),
                std::ptr::null_mut(),
                std::ptr::null_mut(),
                magnitude.as_mut_ptr()
            ),
            TdvrStatus::Ok
        );
        assert!(magnitude.iter().any(|m| *m > 0.0));

        // Refine around the hottest vertices.
        let mut refined: *mut TdvrMesh = std::ptr::null_mut();
        assert_eq!(tdvr_refine(mesh, grads, 0.02, &mut refined), TdvrStatus::Ok);
        assert!(tdvr_mesh_num_tets(refined) > tdvr_mesh_num_tets(mesh));
        assert_eq!(tdvr_mesh_validate(refined), 0);

        // Error path: loading a missing file reports a message.
        let missing = c(dir.path().join("missing.tet").to_str().unwrap());
        let mut bogus: *mut TdvrMesh = std::ptr::null_mut();
        assert_eq!(tdvr_mesh_load(missing.as_ptr(), &mut bogus), TdvrStatus::IoError);
        let msg = CStr::from_ptr(tdvr_last_error_message()).to_string_lossy().into_owned();
        assert!(msg.contains("missing.tet"), "message: {msg}");

        tdvr_gradients_free(grads);
        tdvr_image_free(image);
        tdvr_image_free(re_read);
        tdvr_image_free(target_img);
        tdvr_camera_free(camera);
        tdvr_mesh_free(mesh);
        tdvr_mesh_free(refined);
    }
}
