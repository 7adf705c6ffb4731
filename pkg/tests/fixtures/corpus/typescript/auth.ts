export interface Claims {
    sub: string;
    exp: number;
    roles: string[];
}

export class TokenError extends Error {
    constructor(message: string) {
        super(message);
        this.name = "TokenError";
    }
}

export function decodeClaims(payload: string): Claims {
    const doc = JSON.parse(payload) as Partial<Claims>;
    if (typeof doc.sub !== "string" || typeof doc.exp !== "number") {
        throw new TokenError("missing sub/exp");
    }
    return { sub: doc.sub, exp: doc.exp, roles: doc.roles ?? [] };
}

export function isExpired(claims: Claims, nowSeconds: number): boolean {
    return claims.exp <= nowSeconds;
}

export const hasRole = (claims: Claims, role: string): boolean => {
    return claims.roles.includes(role);
};
