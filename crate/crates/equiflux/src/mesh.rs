//! Conforming 2D triangular meshes: topology, boundary markers, vertex
//! patches, hat functions, uniform refinement, structured generators, and
//! plain-text I/O.
//!
//! Conventions shared by the rest of the crate:
//!
//! * element vertex triples are counterclockwise (normalized at construction,
//!   so all affine reference maps downstream have positive Jacobian
//!   determinant);
//! * local face `i` of an element is the edge opposite local vertex `i`:
//!   face 0 joins local vertices 1,2; face 1 joins 2,0; face 2 joins 0,1;
//! * every [`Face`] stores its vertex pair `(lo, hi)` with `lo < hi`, and the
//!   global unit normal of a face is the `lo → hi` unit tangent rotated a
//!   quarter turn clockwise: `n = (t.y, -t.x)`. The outward normal of an
//!   incident element equals `±n`; the sign is [`Mesh::face_sign`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors from mesh construction, queries, and file I/O.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no elements")]
    Empty,
    #[error("element {element} references vertex {vertex}, but only {num_vertices} vertices exist")]
    IndexOutOfRange {
        element: usize,
        vertex: usize,
        num_vertices: usize,
    },
    #[error("element {0} has zero or near-zero area")]
    ZeroAreaElement(usize),
    #[error("elements {0} and {1} use the same vertex set")]
    DuplicateElement(usize, usize),
    #[error("non-conforming connectivity: edge ({0}, {1}) is shared by more than two elements")]
    NonConforming(usize, usize),
    #[error("non-conforming orientation: elements {0} and {1} traverse their shared edge in the same direction")]
    InconsistentOrientation(usize, usize),
    #[error("boundary face ({0}, {1}) has no marker")]
    UnmarkedBoundaryFace(usize, usize),
    #[error("marker given for ({0}, {1}), which is not a boundary face of the mesh")]
    MarkerNotOnBoundary(usize, usize),
    #[error("conflicting markers for boundary face ({0}, {1})")]
    ConflictingMarker(usize, usize),
    #[error("element {element} is not in the patch of vertex {vertex}")]
    ElementNotInPatch { element: usize, vertex: usize },
    #[error("mesh file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {file}, line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
}

/// Boundary-condition marker carried by each boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMarker {
    Dirichlet,
    Neumann,
}

/// Classification of a mesh vertex by its relation to the Dirichlet boundary.
///
/// `Interior` covers both true interior vertices and Neumann-boundary
/// vertices: their patch problems constrain the flux on the whole patch
/// boundary and use a zero-mean multiplier space. `Dirichlet` marks vertices
/// on the closure of the Dirichlet boundary (including endpoints of Dirichlet
/// faces), whose patch problems leave the Dirichlet faces unconstrained and
/// use the full multiplier space. With no Dirichlet faces at all, every
/// vertex is `Interior`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexClass {
    Interior,
    Dirichlet,
}

/// A mesh edge together with its incident elements.
#[derive(Debug, Clone)]
pub struct Face {
    /// Endpoint vertex indices with `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    /// Incident elements: `(element, None)` for boundary faces.
    pub elements: (usize, Option<usize>),
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }

    /// The element incident to this face other than `element`.
    pub fn other_element(&self, element: usize) -> Option<usize> {
        if self.elements.0 == element {
            self.elements.1
        } else {
            Some(self.elements.0)
        }
    }
}

/// Local faces of the reference triangle: face `i` is opposite vertex `i`.
pub const LOCAL_FACE_VERTICES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

/// A conforming triangulation of a polygonal domain.
///
/// Immutable after construction; all derived connectivity (faces, adjacency,
/// per-element metrics) is computed once by [`build_mesh`].
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point2<f64>>,
    /// Vertex triples, counterclockwise.
    pub elements: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    /// Global face index of each element's local face `i` (opposite vertex `i`).
    pub element_faces: Vec<[usize; 3]>,
    /// Indices into `faces` with exactly one incident element.
    pub boundary_faces: Vec<usize>,
    /// Element diameters (longest edge).
    pub h: Vec<f64>,
    /// Element areas (positive).
    pub areas: Vec<f64>,
    /// Elements incident to each vertex, ascending.
    pub vertex_elements: Vec<Vec<usize>>,
    /// max over elements of diameter / inradius.
    pub shape_regularity: f64,
    /// Diameter of the meshed domain (max vertex distance).
    pub domain_diameter: f64,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Coordinates of the three vertices of element `e`, in stored order.
    pub fn element_coords(&self, e: usize) -> [Point2<f64>; 3] {
        let [a, b, c] = self.elements[e];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_length(&self, f: usize) -> f64 {
        let [a, b] = self.faces[f].vertices;
        (self.vertices[b] - self.vertices[a]).norm()
    }

    /// Unit tangent of face `f`, pointing from its lower to its higher vertex.
    pub fn face_tangent(&self, f: usize) -> Vector2<f64> {
        let [a, b] = self.faces[f].vertices;
        (self.vertices[b] - self.vertices[a]).normalize()
    }

    /// Global unit normal of face `f`: the `lo → hi` tangent rotated a quarter
    /// turn clockwise.
    pub fn face_normal(&self, f: usize) -> Vector2<f64> {
        let t = self.face_tangent(f);
        Vector2::new(t.y, -t.x)
    }

    /// Point on face `f` at parameter `t ∈ [0, 1]` of the `lo → hi`
    /// parameterization.
    pub fn face_point(&self, f: usize, t: f64) -> Point2<f64> {
        let [a, b] = self.faces[f].vertices;
        self.vertices[a] + (self.vertices[b] - self.vertices[a]) * t
    }

    /// Sign relating the global normal of local face `i` of element `e` to the
    /// element's outward normal: `outward = face_sign * face_normal`.
    ///
    /// Equals `+1` exactly when the element's counterclockwise traversal of
    /// the face runs from the lower to the higher global vertex index.
    pub fn face_sign(&self, e: usize, i: usize) -> f64 {
        let tri = self.elements[e];
        let va = tri[LOCAL_FACE_VERTICES[i][0]];
        let vb = tri[LOCAL_FACE_VERTICES[i][1]];
        if va < vb {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward unit normal of element `e` on its local face `i`.
    pub fn outward_normal(&self, e: usize, i: usize) -> Vector2<f64> {
        self.face_normal(self.element_faces[e][i]) * self.face_sign(e, i)
    }

    /// Local index (0..3) of global face `f` within element `e`, if incident.
    pub fn local_face_index(&self, e: usize, f: usize) -> Option<usize> {
        self.element_faces[e].iter().position(|&g| g == f)
    }

    /// Local index (0..3) of global vertex `v` within element `e`, if present.
    pub fn local_vertex_index(&self, e: usize, v: usize) -> Option<usize> {
        self.elements[e].iter().position(|&w| w == v)
    }

    /// Gradients of the three barycentric coordinates of element `e`
    /// (constant on the element).
    pub fn barycentric_gradients(&self, e: usize) -> [Vector2<f64>; 3] {
        let p = self.element_coords(e);
        let two_a = 2.0 * self.areas[e];
        let mut g = [Vector2::zeros(); 3];
        for i in 0..3 {
            let edge = p[(i + 2) % 3] - p[(i + 1) % 3];
            g[i] = Vector2::new(-edge.y, edge.x) / two_a;
        }
        g
    }

    /// Barycentric coordinates of physical point `x` with respect to element
    /// `e` (unclamped; may be negative outside the element).
    pub fn barycentric_coords(&self, e: usize, x: Point2<f64>) -> [f64; 3] {
        let p = self.element_coords(e);
        let two_a = 2.0 * self.areas[e];
        let mut lam = [0.0; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            lam[i] = cross2(p[k] - p[j], x - p[j]) / two_a;
        }
        lam
    }
}

/// Boundary markers, indexed by global face id (`None` on interior faces).
#[derive(Debug, Clone)]
pub struct BoundaryPartition {
    pub markers: Vec<Option<BoundaryMarker>>,
}

impl BoundaryPartition {
    pub fn is_dirichlet(&self, face: usize) -> bool {
        self.markers[face] == Some(BoundaryMarker::Dirichlet)
    }

    pub fn is_neumann(&self, face: usize) -> bool {
        self.markers[face] == Some(BoundaryMarker::Neumann)
    }

    /// True if at least one face carries the Dirichlet marker.
    pub fn has_dirichlet(&self) -> bool {
        self.markers
            .iter()
            .any(|m| *m == Some(BoundaryMarker::Dirichlet))
    }

    /// Number of connected components of the Dirichlet and the Neumann part
    /// of the boundary (faces connected through shared vertices). The
    /// algorithms only need each face to carry one marker, but estimates
    /// downstream are formulated for connected parts, so callers may want to
    /// warn when either count exceeds one.
    pub fn component_counts(&self, mesh: &Mesh) -> (usize, usize) {
        let count = |marker: BoundaryMarker| -> usize {
            let faces: Vec<usize> = (0..mesh.num_faces())
                .filter(|&f| self.markers[f] == Some(marker))
                .collect();
            let mut vertex_comp: HashMap<usize, usize> = HashMap::new();
            let mut comp_of = vec![usize::MAX; faces.len()];
            let mut parents: Vec<usize> = Vec::new();
            fn find(parents: &mut Vec<usize>, mut i: usize) -> usize {
                while parents[i] != i {
                    parents[i] = parents[parents[i]];
                    i = parents[i];
                }
                i
            }
            for (k, &f) in faces.iter().enumerate() {
                let mut root = {
                    parents.push(parents.len());
                    parents.len() - 1
                };
                comp_of[k] = root;
                for &v in &mesh.faces[f].vertices {
                    if let Some(&c) = vertex_comp.get(&v) {
                        let a = find(&mut parents, root);
                        let b = find(&mut parents, c);
                        if a != b {
                            parents[a] = b;
                            root = b;
                        }
                    }
                }
                for &v in &mesh.faces[f].vertices {
                    vertex_comp.insert(v, root);
                }
            }
            let mut roots: Vec<usize> = comp_of
                .iter()
                .map(|&c| find(&mut parents, c))
                .collect();
            roots.sort_unstable();
            roots.dedup();
            roots.len()
        };
        (
            count(BoundaryMarker::Dirichlet),
            count(BoundaryMarker::Neumann),
        )
    }
}

/// One vertex's patch: the elements sharing the vertex, with the boundary
/// face sets that drive the local flux and multiplier spaces.
#[derive(Debug, Clone)]
pub struct Patch {
    /// The patch's center vertex `a`.
    pub center: usize,
    /// Elements having `a` as a vertex, ascending.
    pub elements: Vec<usize>,
    pub class: VertexClass,
    /// Faces of the topological boundary of the patch domain `ω_a`.
    pub boundary_faces: Vec<usize>,
    /// The subset of `boundary_faces` marked Dirichlet.
    pub dirichlet_faces: Vec<usize>,
    /// The subset of `boundary_faces` not containing `a` — exactly the part
    /// of the patch boundary where the hat function of `a` vanishes.
    pub gamma_faces: Vec<usize>,
    /// Diameter of `ω_a` (max distance between patch vertices).
    pub diameter: f64,
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Builds a conforming mesh from raw vertex/element/marker data.
///
/// Element orientation is normalized to counterclockwise. Fails on duplicate
/// elements, zero-area elements, edges shared by more than two elements,
/// inconsistently oriented neighbors, markers on non-boundary edges, and
/// unmarked boundary faces.
pub fn build_mesh(
    vertices: Vec<Point2<f64>>,
    elements: Vec<[usize; 3]>,
    boundary_markers: &[(usize, usize, BoundaryMarker)],
) -> Result<(Mesh, BoundaryPartition), MeshError> {
    if elements.is_empty() {
        return Err(MeshError::Empty);
    }
    let nv = vertices.len();
    let mut elems = elements;

    for (e, tri) in elems.iter_mut().enumerate() {
        for &v in tri.iter() {
            if v >= nv {
                return Err(MeshError::IndexOutOfRange {
                    element: e,
                    vertex: v,
                    num_vertices: nv,
                });
            }
        }
        let [a, b, c] = *tri;
        if a == b || b == c || a == c {
            return Err(MeshError::ZeroAreaElement(e));
        }
        let two_a = cross2(vertices[b] - vertices[a], vertices[c] - vertices[a]);
        let scale = (vertices[b] - vertices[a])
            .norm_squared()
            .max((vertices[c] - vertices[a]).norm_squared())
            .max((vertices[c] - vertices[b]).norm_squared());
        if two_a.abs() <= 1e-14 * scale {
            return Err(MeshError::ZeroAreaElement(e));
        }
        if two_a < 0.0 {
            tri.swap(1, 2);
        }
    }

    let mut seen: HashMap<[usize; 3], usize> = HashMap::new();
    for (e, tri) in elems.iter().enumerate() {
        let mut key = *tri;
        key.sort_unstable();
        if let Some(other) = seen.insert(key, e) {
            return Err(MeshError::DuplicateElement(other, e));
        }
    }

    // Faces, discovered in element order so ids are deterministic. For each
    // face remember the traversal direction of the first incident element;
    // conforming neighbors must traverse the shared edge oppositely.
    let mut face_ids: HashMap<[usize; 2], usize> = HashMap::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut first_dir: Vec<bool> = Vec::new();
    let mut element_faces = vec![[usize::MAX; 3]; elems.len()];
    for (e, tri) in elems.iter().enumerate() {
        for i in 0..3 {
            let va = tri[LOCAL_FACE_VERTICES[i][0]];
            let vb = tri[LOCAL_FACE_VERTICES[i][1]];
            let key = [va.min(vb), va.max(vb)];
            match face_ids.get(&key) {
                None => {
                    face_ids.insert(key, faces.len());
                    element_faces[e][i] = faces.len();
                    faces.push(Face {
                        vertices: key,
                        elements: (e, None),
                    });
                    first_dir.push(va < vb);
                }
                Some(&f) => {
                    if faces[f].elements.1.is_some() {
                        return Err(MeshError::NonConforming(key[0], key[1]));
                    }
                    if first_dir[f] == (va < vb) {
                        return Err(MeshError::InconsistentOrientation(faces[f].elements.0, e));
                    }
                    faces[f].elements.1 = Some(e);
                    element_faces[e][i] = f;
                }
            }
        }
    }

    let boundary_faces: Vec<usize> = (0..faces.len()).filter(|&f| faces[f].is_boundary()).collect();

    let mut markers: Vec<Option<BoundaryMarker>> = vec![None; faces.len()];
    for &(a, b, m) in boundary_markers {
        let key = [a.min(b), a.max(b)];
        let f = match face_ids.get(&key) {
            Some(&f) if faces[f].is_boundary() => f,
            _ => return Err(MeshError::MarkerNotOnBoundary(a, b)),
        };
        match markers[f] {
            None => markers[f] = Some(m),
            Some(prev) if prev == m => {}
            Some(_) => return Err(MeshError::ConflictingMarker(key[0], key[1])),
        }
    }
    for &f in &boundary_faces {
        if markers[f].is_none() {
            let [a, b] = faces[f].vertices;
            return Err(MeshError::UnmarkedBoundaryFace(a, b));
        }
    }

    let mut h = Vec::with_capacity(elems.len());
    let mut areas = Vec::with_capacity(elems.len());
    let mut shape_regularity: f64 = 0.0;
    for tri in &elems {
        let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
        let l0 = (p[2] - p[1]).norm();
        let l1 = (p[0] - p[2]).norm();
        let l2 = (p[1] - p[0]).norm();
        let area = 0.5 * cross2(p[1] - p[0], p[2] - p[0]);
        let diam = l0.max(l1).max(l2);
        let inradius = area / (0.5 * (l0 + l1 + l2));
        shape_regularity = shape_regularity.max(diam / inradius);
        h.push(diam);
        areas.push(area);
    }

    let mut vertex_elements = vec![Vec::new(); nv];
    for (e, tri) in elems.iter().enumerate() {
        for &v in tri {
            vertex_elements[v].push(e);
        }
    }

    let domain_diameter = hull_diameter(&vertices);

    Ok((
        Mesh {
            vertices,
            elements: elems,
            faces,
            element_faces,
            boundary_faces,
            h,
            areas,
            vertex_elements,
            shape_regularity,
            domain_diameter,
        },
        BoundaryPartition { markers },
    ))
}

/// Diameter of a point set via its convex hull (Andrew's monotone chain),
/// avoiding the quadratic all-pairs scan on refined meshes.
fn hull_diameter(pts: &[Point2<f64>]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| {
        (pts[a].x, pts[a].y)
            .partial_cmp(&(pts[b].x, pts[b].y))
            .unwrap()
    });
    let mut hull: Vec<usize> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2 {
                let a = pts[hull[hull.len() - 2]];
                let b = pts[hull[hull.len() - 1]];
                if cross2(b - a, pts[i] - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        hull.pop();
    }
    let mut best: f64 = 0.0;
    for (k, &i) in hull.iter().enumerate() {
        for &j in &hull[k + 1..] {
            best = best.max((pts[j] - pts[i]).norm());
        }
    }
    best
}

/// Classifies every vertex: `Dirichlet` exactly when the vertex lies on the
/// closure of the Dirichlet boundary (i.e. is an endpoint of some Dirichlet
/// face); `Interior` otherwise, including all vertices of a pure-Neumann
/// boundary.
pub fn classify_vertices(mesh: &Mesh, partition: &BoundaryPartition) -> Vec<VertexClass> {
    let mut classes = vec![VertexClass::Interior; mesh.num_vertices()];
    for (f, face) in mesh.faces.iter().enumerate() {
        if partition.is_dirichlet(f) {
            for &v in &face.vertices {
                classes[v] = VertexClass::Dirichlet;
            }
        }
    }
    classes
}

/// Builds the patch of vertex `a`; `classes` must come from
/// [`classify_vertices`] on the same mesh and partition.
pub fn vertex_patch(
    mesh: &Mesh,
    partition: &BoundaryPartition,
    classes: &[VertexClass],
    a: usize,
) -> Patch {
    let elements = mesh.vertex_elements[a].clone();
    let mut boundary_faces = Vec::new();
    for &e in &elements {
        for i in 0..3 {
            let f = mesh.element_faces[e][i];
            let on_patch_boundary = match mesh.faces[f].other_element(e) {
                None => true,
                Some(other) => !elements.contains(&other),
            };
            if on_patch_boundary {
                boundary_faces.push(f);
            }
        }
    }
    let dirichlet_faces: Vec<usize> = boundary_faces
        .iter()
        .copied()
        .filter(|&f| partition.is_dirichlet(f))
        .collect();
    let gamma_faces: Vec<usize> = boundary_faces
        .iter()
        .copied()
        .filter(|&f| !mesh.faces[f].vertices.contains(&a))
        .collect();

    let mut patch_vertices: Vec<usize> = elements
        .iter()
        .flat_map(|&e| mesh.elements[e])
        .collect();
    patch_vertices.sort_unstable();
    patch_vertices.dedup();
    let mut diameter: f64 = 0.0;
    for (k, &i) in patch_vertices.iter().enumerate() {
        for &j in &patch_vertices[k + 1..] {
            diameter = diameter.max((mesh.vertices[j] - mesh.vertices[i]).norm());
        }
    }

    Patch {
        center: a,
        elements,
        class: classes[a],
        boundary_faces,
        dirichlet_faces,
        gamma_faces,
        diameter,
    }
}

/// Builds every vertex patch of the mesh.
pub fn all_patches(
    mesh: &Mesh,
    partition: &BoundaryPartition,
    classes: &[VertexClass],
) -> Vec<Patch> {
    (0..mesh.num_vertices())
        .map(|a| vertex_patch(mesh, partition, classes, a))
        .collect()
}

/// Evaluates the hat function of the patch center on element `e` at physical
/// point `x`: returns `(ψ_a(x), ∇ψ_a|_e)`. The gradient is constant per
/// element. Fails if `e` is not in the patch.
pub fn hat_eval(
    mesh: &Mesh,
    patch: &Patch,
    e: usize,
    x: Point2<f64>,
) -> Result<(f64, Vector2<f64>), MeshError> {
    let local = mesh
        .local_vertex_index(e, patch.center)
        .ok_or(MeshError::ElementNotInPatch {
            element: e,
            vertex: patch.center,
        })?;
    let lam = mesh.barycentric_coords(e, x);
    let grads = mesh.barycentric_gradients(e);
    Ok((lam[local], grads[local]))
}

/// A uniformly refined mesh together with the child → parent element map.
#[derive(Debug)]
pub struct RefinedMesh {
    pub mesh: Mesh,
    pub partition: BoundaryPartition,
    /// `parent_elements[child] = parent`; each parent has children
    /// `4p .. 4p+4` in order.
    pub parent_elements: Vec<usize>,
}

/// Splits every triangle into four similar triangles through the edge
/// midpoints; boundary markers are inherited by the two halves of each
/// boundary face. Returns the child → parent element map alongside the mesh
/// so fields can be transferred exactly between the levels.
pub fn refine_uniform_traced(mesh: &Mesh, partition: &BoundaryPartition) -> RefinedMesh {
    let nv = mesh.num_vertices();
    let mut vertices = mesh.vertices.clone();
    // Midpoint of face f becomes vertex nv + f.
    for f in 0..mesh.num_faces() {
        vertices.push(mesh.face_point(f, 0.5));
    }

    let mut elements = Vec::with_capacity(4 * mesh.num_elements());
    let mut parent_elements = Vec::with_capacity(4 * mesh.num_elements());
    for (e, tri) in mesh.elements.iter().enumerate() {
        let [v0, v1, v2] = *tri;
        let m12 = nv + mesh.element_faces[e][0];
        let m20 = nv + mesh.element_faces[e][1];
        let m01 = nv + mesh.element_faces[e][2];
        elements.push([v0, m01, m20]);
        elements.push([m01, v1, m12]);
        elements.push([m20, m12, v2]);
        elements.push([m01, m12, m20]);
        parent_elements.extend_from_slice(&[e, e, e, e]);
    }

    let mut markers = Vec::new();
    for &f in &mesh.boundary_faces {
        let m = partition.markers[f].expect("boundary faces are always marked");
        let [a, b] = mesh.faces[f].vertices;
        markers.push((a, nv + f, m));
        markers.push((nv + f, b, m));
    }

    let (mesh, partition) = build_mesh(vertices, elements, &markers)
        .expect("uniform refinement of a valid mesh is valid");
    RefinedMesh {
        mesh,
        partition,
        parent_elements,
    }
}

/// [`refine_uniform_traced`] without the parent map.
pub fn refine_uniform(mesh: &Mesh, partition: &BoundaryPartition) -> (Mesh, BoundaryPartition) {
    let refined = refine_uniform_traced(mesh, partition);
    (refined.mesh, refined.partition)
}

/// Marker-assignment helpers for the generators: mark every boundary face
/// Dirichlet / Neumann regardless of position.
pub fn all_dirichlet(_: Point2<f64>, _: Point2<f64>) -> BoundaryMarker {
    BoundaryMarker::Dirichlet
}

pub fn all_neumann(_: Point2<f64>, _: Point2<f64>) -> BoundaryMarker {
    BoundaryMarker::Neumann
}

fn square_mesh(
    n: usize,
    mut diagonal_up: impl FnMut(usize, usize) -> bool,
    jitter: Option<(u64, f64)>,
    marker: impl Fn(Point2<f64>, Point2<f64>) -> BoundaryMarker,
) -> (Mesh, BoundaryPartition) {
    assert!(n >= 1, "square mesh needs at least one cell per side");
    let step = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point2::new(i as f64 * step, j as f64 * step));
        }
    }
    if let Some((seed, amplitude)) = jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 1..n {
            for i in 1..n {
                let dx = (rng.random::<f64>() - 0.5) * 2.0 * amplitude * step;
                let dy = (rng.random::<f64>() - 0.5) * 2.0 * amplitude * step;
                vertices[id(i, j)] += Vector2::new(dx, dy);
            }
        }
    }

    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            if diagonal_up(i, j) {
                // Diagonal a–c.
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            } else {
                // Diagonal b–d.
                elements.push([a, b, d]);
                elements.push([b, c, d]);
            }
        }
    }

    let mut markers = Vec::with_capacity(4 * n);
    let mut mark = |a: usize, b: usize, vs: &[Point2<f64>]| {
        markers.push((a, b, marker(vs[a], vs[b])));
    };
    for i in 0..n {
        mark(id(i, 0), id(i + 1, 0), &vertices);
        mark(id(i, n), id(i + 1, n), &vertices);
        mark(id(0, i), id(0, i + 1), &vertices);
        mark(id(n, i), id(n, i + 1), &vertices);
    }

    build_mesh(vertices, elements, &markers).expect("generated square mesh is valid")
}

/// Structured unit-square mesh: `n × n` cells each split along the same
/// diagonal, `2n²` triangles. The marker function receives each boundary
/// face's endpoints.
pub fn structured_square(
    n: usize,
    marker: impl Fn(Point2<f64>, Point2<f64>) -> BoundaryMarker,
) -> (Mesh, BoundaryPartition) {
    square_mesh(n, |_, _| true, None, marker)
}

/// Unstructured-connectivity unit-square mesh: `n × n` cells with seeded
/// random diagonal orientation and seeded jitter of the interior grid
/// vertices (boundary vertices stay put, so the domain is exactly the unit
/// square). `2n²` triangles; deterministic for a fixed seed. The jitter
/// amplitude (fraction ±0.2 of the grid step per coordinate) keeps all
/// triangles valid.
pub fn perturbed_square(
    n: usize,
    seed: u64,
    marker: impl Fn(Point2<f64>, Point2<f64>) -> BoundaryMarker,
) -> (Mesh, BoundaryPartition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    square_mesh(n, move |_, _| rng.random_bool(0.5), Some((seed, 0.2)), marker)
}

/// Writes the mesh in the plain-text format: a node file (`count`, then
/// `id x y` lines), an element file (`count`, then `id v1 v2 v3` lines), and
/// a boundary file (`v1 v2 marker` lines, marker `D` or `N`). Ids are 0-based.
pub fn write_mesh(
    mesh: &Mesh,
    partition: &BoundaryPartition,
    node_path: &Path,
    element_path: &Path,
    boundary_path: &Path,
) -> Result<(), MeshError> {
    let mut nodes = String::new();
    let _ = writeln!(nodes, "{}", mesh.num_vertices());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(nodes, "{} {} {}", i, v.x, v.y);
    }
    std::fs::write(node_path, nodes)?;

    let mut elements = String::new();
    let _ = writeln!(elements, "{}", mesh.num_elements());
    for (e, tri) in mesh.elements.iter().enumerate() {
        let _ = writeln!(elements, "{} {} {} {}", e, tri[0], tri[1], tri[2]);
    }
    std::fs::write(element_path, elements)?;

    let mut boundary = String::new();
    for &f in &mesh.boundary_faces {
        let [a, b] = mesh.faces[f].vertices;
        let m = match partition.markers[f] {
            Some(BoundaryMarker::Dirichlet) => "D",
            Some(BoundaryMarker::Neumann) => "N",
            None => unreachable!("boundary faces are always marked"),
        };
        let _ = writeln!(boundary, "{} {} {}", a, b, m);
    }
    std::fs::write(boundary_path, boundary)?;
    Ok(())
}

fn parse_error(file: &Path, line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads a mesh written in the plain-text format of [`write_mesh`].
pub fn read_mesh(
    node_path: &Path,
    element_path: &Path,
    boundary_path: &Path,
) -> Result<(Mesh, BoundaryPartition), MeshError> {
    let node_text = std::fs::read_to_string(node_path)?;
    let mut lines = data_lines(&node_text);
    let (ln, first) = lines
        .next()
        .ok_or_else(|| parse_error(node_path, 0, "empty node file"))?;
    let count: usize = first
        .parse()
        .map_err(|_| parse_error(node_path, ln, "expected vertex count"))?;
    let mut vertices = vec![None; count];
    for (ln, line) in lines {
        let mut tok = line.split_whitespace();
        let err = |m: &str| parse_error(node_path, ln, m);
        let id: usize = tok
            .next()
            .ok_or_else(|| err("missing id"))?
            .parse()
            .map_err(|_| err("bad id"))?;
        let x: f64 = tok
            .next()
            .ok_or_else(|| err("missing x"))?
            .parse()
            .map_err(|_| err("bad x"))?;
        let y: f64 = tok
            .next()
            .ok_or_else(|| err("missing y"))?
            .parse()
            .map_err(|_| err("bad y"))?;
        if id >= count {
            return Err(err("id out of range"));
        }
        if vertices[id].replace(Point2::new(x, y)).is_some() {
            return Err(err("duplicate id"));
        }
    }
    let vertices: Vec<Point2<f64>> = vertices
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| parse_error(node_path, 0, format!("missing vertex {i}"))))
        .collect::<Result<_, _>>()?;

    let element_text = std::fs::read_to_string(element_path)?;
    let mut lines = data_lines(&element_text);
    let (ln, first) = lines
        .next()
        .ok_or_else(|| parse_error(element_path, 0, "empty element file"))?;
    let count: usize = first
        .parse()
        .map_err(|_| parse_error(element_path, ln, "expected element count"))?;
    let mut elements = vec![None; count];
    for (ln, line) in lines {
        let err = |m: &str| parse_error(element_path, ln, m);
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err("bad index")))
            .collect::<Result<_, _>>()?;
        if vals.len() != 4 {
            return Err(err("expected `id v1 v2 v3`"));
        }
        if vals[0] >= count {
            return Err(err("id out of range"));
        }
        if elements[vals[0]].replace([vals[1], vals[2], vals[3]]).is_some() {
            return Err(err("duplicate id"));
        }
    }
    let elements: Vec<[usize; 3]> = elements
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            e.ok_or_else(|| parse_error(element_path, 0, format!("missing element {i}")))
        })
        .collect::<Result<_, _>>()?;

    let boundary_text = std::fs::read_to_string(boundary_path)?;
    let mut markers = Vec::new();
    for (ln, line) in data_lines(&boundary_text) {
        let err = |m: &str| parse_error(boundary_path, ln, m);
        let mut tok = line.split_whitespace();
        let a: usize = tok
            .next()
            .ok_or_else(|| err("missing v1"))?
            .parse()
            .map_err(|_| err("bad v1"))?;
        let b: usize = tok
            .next()
            .ok_or_else(|| err("missing v2"))?
            .parse()
            .map_err(|_| err("bad v2"))?;
        let m = match tok.next().ok_or_else(|| err("missing marker"))? {
            "D" => BoundaryMarker::Dirichlet,
            "N" => BoundaryMarker::Neumann,
            other => return Err(err(&format!("unknown marker `{other}` (expected D or N)"))),
        };
        markers.push((a, b, m));
    }

    build_mesh(vertices, elements, &markers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_triangle() -> (Mesh, BoundaryPartition) {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let markers = [
            (0, 1, BoundaryMarker::Dirichlet),
            (1, 2, BoundaryMarker::Dirichlet),
            (2, 0, BoundaryMarker::Dirichlet),
        ];
        build_mesh(vertices, vec![[0, 1, 2]], &markers).unwrap()
    }

    fn two_element_square() -> (Mesh, BoundaryPartition) {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let markers = [
            (0, 1, BoundaryMarker::Dirichlet),
            (1, 2, BoundaryMarker::Dirichlet),
            (2, 3, BoundaryMarker::Dirichlet),
            (3, 0, BoundaryMarker::Dirichlet),
        ];
        build_mesh(vertices, vec![[0, 1, 2], [0, 2, 3]], &markers).unwrap()
    }

    #[test]
    fn reference_triangle_topology() {
        let (mesh, partition) = reference_triangle();
        assert_eq!(mesh.num_elements(), 1);
        assert_eq!(mesh.num_faces(), 3);
        assert_eq!(mesh.boundary_faces.len(), 3);
        assert!((mesh.h[0] - 2.0f64.sqrt()).abs() < 1e-15);
        assert!((mesh.areas[0] - 0.5).abs() < 1e-15);
        assert!(partition.has_dirichlet());
    }

    #[test]
    fn two_element_square_topology() {
        let (mesh, _) = two_element_square();
        assert_eq!(mesh.num_elements(), 2);
        assert_eq!(mesh.num_faces(), 5);
        assert_eq!(mesh.boundary_faces.len(), 4);
        let interior: Vec<usize> = (0..5).filter(|&f| !mesh.faces[f].is_boundary()).collect();
        assert_eq!(interior.len(), 1);
        let diag = &mesh.faces[interior[0]];
        assert_eq!(diag.vertices, [0, 2]);
        assert_eq!(diag.elements, (0, Some(1)));
        assert!((mesh.domain_diameter - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clockwise_input_is_normalized() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let markers = [
            (0, 1, BoundaryMarker::Neumann),
            (1, 2, BoundaryMarker::Neumann),
            (2, 0, BoundaryMarker::Neumann),
        ];
        // Vertex order (0, 2, 1) is clockwise.
        let (mesh, _) = build_mesh(vertices, vec![[0, 2, 1]], &markers).unwrap();
        assert!(mesh.areas[0] > 0.0);
        assert_eq!(mesh.elements[0], [0, 1, 2]);
    }

    #[test]
    fn outward_normals_point_outward() {
        let (mesh, _) = two_element_square();
        for e in 0..mesh.num_elements() {
            let p = mesh.element_coords(e);
            let centroid = Point2::from((p[0].coords + p[1].coords + p[2].coords) / 3.0);
            for i in 0..3 {
                let f = mesh.element_faces[e][i];
                let mid = mesh.face_point(f, 0.5);
                let n = mesh.outward_normal(e, i);
                assert!((n.norm() - 1.0).abs() < 1e-14);
                assert!(n.dot(&(mid - centroid)) > 0.0, "normal must leave the element");
            }
        }
    }

    #[test]
    fn rejects_edge_shared_by_three_elements() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.0, -1.0),
            Point2::new(1.0, 1.0),
        ];
        let elements = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        let err = build_mesh(vertices, elements, &[]).unwrap_err();
        assert!(matches!(err, MeshError::NonConforming(0, 1)));
    }

    #[test]
    fn rejects_zero_area_element() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
        ];
        let err = build_mesh(vertices, vec![[0, 1, 2]], &[]).unwrap_err();
        assert!(matches!(err, MeshError::ZeroAreaElement(0)));
    }

    #[test]
    fn rejects_duplicate_element() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let err = build_mesh(vertices, vec![[0, 1, 2], [1, 2, 0]], &[]).unwrap_err();
        assert!(matches!(err, MeshError::DuplicateElement(0, 1)));
    }

    #[test]
    fn rejects_unmarked_boundary_face() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let markers = [(0, 1, BoundaryMarker::Dirichlet)];
        let err = build_mesh(vertices, vec![[0, 1, 2]], &markers).unwrap_err();
        assert!(matches!(err, MeshError::UnmarkedBoundaryFace(..)));
    }

    #[test]
    fn rejects_marker_on_interior_face() {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let markers = [
            (0, 1, BoundaryMarker::Dirichlet),
            (1, 2, BoundaryMarker::Dirichlet),
            (2, 3, BoundaryMarker::Dirichlet),
            (3, 0, BoundaryMarker::Dirichlet),
            (0, 2, BoundaryMarker::Dirichlet),
        ];
        let err = build_mesh(vertices, vec![[0, 1, 2], [0, 2, 3]], &markers).unwrap_err();
        assert!(matches!(err, MeshError::MarkerNotOnBoundary(0, 2)));
    }

    #[test]
    fn classifies_vertices_by_dirichlet_closure() {
        // All Dirichlet: every square corner is a Dirichlet vertex.
        let (mesh, partition) = two_element_square();
        let classes = classify_vertices(&mesh, &partition);
        assert!(classes.iter().all(|&c| c == VertexClass::Dirichlet));

        // All Neumann: every vertex counts as interior.
        let (mesh, partition) = structured_square(2, all_neumann);
        let classes = classify_vertices(&mesh, &partition);
        assert!(classes.iter().all(|&c| c == VertexClass::Interior));

        // Left edge Dirichlet, rest Neumann: exactly the x = 0 vertices are
        // Dirichlet (including the two corners, which lie in the closure).
        let (mesh, partition) = structured_square(2, |a, b| {
            if a.x == 0.0 && b.x == 0.0 {
                BoundaryMarker::Dirichlet
            } else {
                BoundaryMarker::Neumann
            }
        });
        let classes = classify_vertices(&mesh, &partition);
        for (v, class) in classes.iter().enumerate() {
            let expected = if mesh.vertices[v].x == 0.0 {
                VertexClass::Dirichlet
            } else {
                VertexClass::Interior
            };
            assert_eq!(*class, expected, "vertex {v} at {:?}", mesh.vertices[v]);
        }
    }

    #[test]
    fn interior_patch_gamma_is_whole_boundary() {
        let (mesh, partition) = structured_square(4, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let center = (0..mesh.num_vertices())
            .find(|&v| (mesh.vertices[v] - Point2::new(0.5, 0.5)).norm() < 1e-12)
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, center);
        assert_eq!(patch.class, VertexClass::Interior);
        assert_eq!(patch.elements.len(), 6);
        assert_eq!(patch.boundary_faces.len(), 6);
        assert_eq!(patch.gamma_faces, patch.boundary_faces);
        assert!(patch.dirichlet_faces.is_empty());
    }

    #[test]
    fn corner_patch_with_one_element() {
        // In `structured_square`, corner (1, 0) belongs to exactly one
        // triangle. Its patch boundary has 3 faces; the hat vanishes on the
        // single face opposite the corner.
        let (mesh, partition) = structured_square(2, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let corner = (0..mesh.num_vertices())
            .find(|&v| (mesh.vertices[v] - Point2::new(1.0, 0.0)).norm() < 1e-12)
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, corner);
        assert_eq!(patch.elements.len(), 1);
        assert_eq!(patch.boundary_faces.len(), 3);
        assert_eq!(patch.gamma_faces.len(), 1);
        assert!(!mesh.faces[patch.gamma_faces[0]].vertices.contains(&corner));
        assert_eq!(patch.class, VertexClass::Dirichlet);
        assert_eq!(patch.dirichlet_faces.len(), 2);
    }

    #[test]
    fn boundary_noncorner_patch_gamma_omits_two_faces() {
        let (mesh, partition) = structured_square(2, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let v = (0..mesh.num_vertices())
            .find(|&v| (mesh.vertices[v] - Point2::new(0.5, 0.0)).norm() < 1e-12)
            .unwrap();
        let patch = vertex_patch(&mesh, &partition, &classes, v);
        let containing: Vec<usize> = patch
            .boundary_faces
            .iter()
            .copied()
            .filter(|&f| mesh.faces[f].vertices.contains(&v))
            .collect();
        assert_eq!(containing.len(), 2, "the two boundary faces at the vertex");
        assert_eq!(
            patch.gamma_faces.len(),
            patch.boundary_faces.len() - 2,
            "hat vanishes everywhere except on the two faces touching the vertex"
        );
    }

    #[test]
    fn every_element_in_exactly_three_patches() {
        let (mesh, partition) = perturbed_square(4, 3, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let patches = all_patches(&mesh, &partition, &classes);
        let mut count = vec![0usize; mesh.num_elements()];
        for patch in &patches {
            for &e in &patch.elements {
                count[e] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 3));
    }

    #[test]
    fn hat_values_and_partition_of_unity() {
        let (mesh, partition) = perturbed_square(3, 11, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let patches = all_patches(&mesh, &partition, &classes);
        let mut rng = ChaCha8Rng::seed_from_u64(7);

        // Nodal values: 1 at the center, 1/3 at the barycenter.
        for patch in &patches {
            let e = patch.elements[0];
            let (val, _) = hat_eval(&mesh, patch, e, mesh.vertices[patch.center]).unwrap();
            assert!((val - 1.0).abs() < 1e-13);
            let p = mesh.element_coords(e);
            let bary = Point2::from((p[0].coords + p[1].coords + p[2].coords) / 3.0);
            let (val, _) = hat_eval(&mesh, patch, e, bary).unwrap();
            assert!((val - 1.0 / 3.0).abs() < 1e-13);
        }

        // Partition of unity at 1000 random points in random elements.
        for _ in 0..1000 {
            let e = rng.random_range(0..mesh.num_elements());
            let (mut r, mut s) = (rng.random::<f64>(), rng.random::<f64>());
            if r + s > 1.0 {
                r = 1.0 - r;
                s = 1.0 - s;
            }
            let p = mesh.element_coords(e);
            let x = Point2::from(
                p[0].coords * (1.0 - r - s) + p[1].coords * r + p[2].coords * s,
            );
            let mut sum = 0.0;
            let mut grad_sum = Vector2::zeros();
            for &v in &mesh.elements[e] {
                let (val, grad) = hat_eval(&mesh, &patches[v], e, x).unwrap();
                sum += val;
                grad_sum += grad;
            }
            assert!((sum - 1.0).abs() <= 1e-14);
            assert!(grad_sum.norm() <= 1e-12);
        }
    }

    #[test]
    fn hat_vanishes_on_gamma_faces() {
        let (mesh, partition) = perturbed_square(3, 5, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        for a in 0..mesh.num_vertices() {
            let patch = vertex_patch(&mesh, &partition, &classes, a);
            for &f in &patch.gamma_faces {
                // Find a patch element incident to this face.
                let e = *patch
                    .elements
                    .iter()
                    .find(|&&e| mesh.element_faces[e].contains(&f))
                    .unwrap();
                for t in [0.0, 1.0] {
                    let (val, _) = hat_eval(&mesh, &patch, e, mesh.face_point(f, t)).unwrap();
                    assert!(val.abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn hat_eval_rejects_foreign_element() {
        let (mesh, partition) = structured_square(2, all_dirichlet);
        let classes = classify_vertices(&mesh, &partition);
        let patch = vertex_patch(&mesh, &partition, &classes, 0);
        let foreign = (0..mesh.num_elements())
            .find(|&e| !mesh.elements[e].contains(&0))
            .unwrap();
        let err = hat_eval(&mesh, &patch, foreign, Point2::new(0.9, 0.9)).unwrap_err();
        assert!(matches!(err, MeshError::ElementNotInPatch { .. }));
    }

    #[test]
    fn uniform_refinement_quarters_elements() {
        let (mesh, partition) = two_element_square();
        let refined = refine_uniform_traced(&mesh, &partition);
        assert_eq!(refined.mesh.num_elements(), 8);
        assert_eq!(refined.parent_elements.len(), 8);
        for (child, &parent) in refined.parent_elements.iter().enumerate() {
            assert_eq!(parent, child / 4);
            assert!((refined.mesh.h[child] - 0.5 * mesh.h[parent]).abs() < 1e-14);
            assert!((refined.mesh.areas[child] - 0.25 * mesh.areas[parent]).abs() < 1e-14);
        }
        assert!((refined.mesh.shape_regularity - mesh.shape_regularity).abs() < 1e-12);
        assert_eq!(refined.mesh.boundary_faces.len(), 8);
        let area: f64 = refined.mesh.areas.iter().sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn refinement_inherits_markers() {
        let (mesh, partition) = structured_square(2, |a, b| {
            if a.y == 0.0 && b.y == 0.0 {
                BoundaryMarker::Neumann
            } else {
                BoundaryMarker::Dirichlet
            }
        });
        let count = |mesh: &Mesh, partition: &BoundaryPartition, m: BoundaryMarker| {
            mesh.boundary_faces
                .iter()
                .filter(|&&f| partition.markers[f] == Some(m))
                .count()
        };
        let n_before = count(&mesh, &partition, BoundaryMarker::Neumann);
        let d_before = count(&mesh, &partition, BoundaryMarker::Dirichlet);
        let (rmesh, rpartition) = refine_uniform(&mesh, &partition);
        assert_eq!(count(&rmesh, &rpartition, BoundaryMarker::Neumann), 2 * n_before);
        assert_eq!(count(&rmesh, &rpartition, BoundaryMarker::Dirichlet), 2 * d_before);
    }

    #[test]
    fn structured_and_perturbed_generators() {
        let (mesh, _) = structured_square(2, all_dirichlet);
        assert_eq!(mesh.num_elements(), 8);
        assert_eq!(mesh.num_vertices(), 9);
        assert_eq!(mesh.boundary_faces.len(), 8);

        let (mesh, _) = perturbed_square(10, 42, all_dirichlet);
        assert_eq!(mesh.num_elements(), 200);
        let area: f64 = mesh.areas.iter().sum();
        assert!((area - 1.0).abs() < 1e-12, "jitter must preserve the domain");
        assert!((mesh.domain_diameter - 2.0f64.sqrt()).abs() < 1e-12);
        assert!(mesh.shape_regularity < 12.0, "jitter amplitude keeps quality");

        // Same seed, same mesh; different seed, different mesh.
        let (again, _) = perturbed_square(10, 42, all_dirichlet);
        assert_eq!(mesh.elements, again.elements);
        assert_eq!(mesh.vertices, again.vertices);
        let (other, _) = perturbed_square(10, 43, all_dirichlet);
        assert!(mesh.elements != other.elements || mesh.vertices != other.vertices);
    }

    #[test]
    fn marker_components_counted() {
        // Dirichlet on left and right edges only: two Dirichlet components,
        // two Neumann components (top and bottom).
        let (mesh, partition) = structured_square(2, |a, b| {
            if (a.x == 0.0 && b.x == 0.0) || (a.x == 1.0 && b.x == 1.0) {
                BoundaryMarker::Dirichlet
            } else {
                BoundaryMarker::Neumann
            }
        });
        assert_eq!(partition.component_counts(&mesh), (2, 2));

        let (mesh, partition) = structured_square(2, all_dirichlet);
        assert_eq!(partition.component_counts(&mesh), (1, 0));
    }

    #[test]
    fn plain_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let node = dir.path().join("mesh.node");
        let ele = dir.path().join("mesh.ele");
        let bnd = dir.path().join("mesh.bnd");

        let (mesh, partition) = perturbed_square(3, 7, |a, b| {
            if a.y == 0.0 && b.y == 0.0 {
                BoundaryMarker::Neumann
            } else {
                BoundaryMarker::Dirichlet
            }
        });
        write_mesh(&mesh, &partition, &node, &ele, &bnd).unwrap();
        let (back, back_partition) = read_mesh(&node, &ele, &bnd).unwrap();

        assert_eq!(mesh.vertices, back.vertices);
        assert_eq!(mesh.elements, back.elements);
        assert_eq!(mesh.num_faces(), back.num_faces());
        for f in 0..mesh.num_faces() {
            assert_eq!(mesh.faces[f].vertices, back.faces[f].vertices);
            assert_eq!(partition.markers[f], back_partition.markers[f]);
        }
    }
}
