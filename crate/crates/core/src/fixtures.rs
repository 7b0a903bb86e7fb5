//! Small hand-built taxonomies shared by unit and integration tests.

use crate::ontology::{Ontology, RawOntology};

/// Organization taxonomy with a two-parent `University`:
///
/// ```text
/// Entity
/// └── Organization
///     ├── EduIns ──── University, HighSchool
///     ├── ResIns ──── University, AcademySci
///     └── SportsOrg
/// ```
pub fn ont_a() -> Ontology {
    let raw = RawOntology::default()
        .concept("Entity", "Entity")
        .concept("Organization", "Organization")
        .concept("EduIns", "Educational institution")
        .concept("ResIns", "Research institution")
        .concept("SportsOrg", "Sports organization")
        .concept("University", "University")
        .concept("HighSchool", "High school")
        .concept("AcademySci", "Academy of sciences")
        .edge("Organization", "Entity")
        .edge("EduIns", "Organization")
        .edge("ResIns", "Organization")
        .edge("SportsOrg", "Organization")
        .edge("University", "EduIns")
        .edge("University", "ResIns")
        .edge("HighSchool", "EduIns")
        .edge("AcademySci", "ResIns");
    Ontology::from_raw(raw).expect("fixture is valid")
}

/// Location taxonomy: `Park` and `GPE` are siblings under `Location`,
/// `Country` and `City` sit below `GPE`.
pub fn locations() -> Ontology {
    let raw = RawOntology::default()
        .concept("Entity", "Entity")
        .concept("Location", "Location")
        .concept("Park", "Park")
        .concept("NationalPark", "National park")
        .concept("GPE", "GPE")
        .concept("Country", "Country")
        .concept("City", "City")
        .edge("Location", "Entity")
        .edge("Park", "Location")
        .edge("NationalPark", "Park")
        .edge("GPE", "Location")
        .edge("Country", "GPE")
        .edge("City", "GPE");
    Ontology::from_raw(raw).expect("fixture is valid")
}
