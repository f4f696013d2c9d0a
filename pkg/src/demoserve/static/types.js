// Wire types for the three server endpoints.
export {};
